//! Seeded, parallel train simulation shared by the commands.

use std::f64::consts::PI;
use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{CalibrationSource, ExperimentConfig, Physical};
use crate::calibrate::{fit_calibration, BinnedHistogram, CalibrationFit, FitInit};
use crate::condition::{
    conditional_value, post_select, run_train, ConditionalSample, Conditioning, LinearConversion,
    PulseSchedule, Selection, SelectionStats, TrainSetup,
};
use crate::error::{Error, Result};
use crate::lsq::LmOptions;
use crate::mechsim::{displacement_at, evolve_dephase, sample_thermal_state, RngStream};
use crate::transduce::{measure_pulse, PulseRecord, Transducer};

pub const LANE_THERMAL: u8 = 1;
pub const LANE_TOMO: u8 = 2;
pub const LANE_DECOHERENCE: u8 = 3;
pub const LANE_NOISE: u8 = 4;
pub const LANE_SWEEP: u8 = 5;
pub const LANE_CALIBRATION: u8 = 6;

/// How raw H' becomes displacement and where the selection threshold sits,
/// both expressed against the true H'.
#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub source: CalibrationSource,
    /// True H' per x_zpf as seen through the calibration.
    pub gain: f64,
    /// Factor from the configured threshold to the true-H' threshold.
    pub threshold_scale: f64,
    pub fit: Option<CalibrationFit>,
}

impl Calibration {
    pub fn conversion(&self) -> LinearConversion {
        LinearConversion { gain: self.gain }
    }
}

/// Half-period pulse pairs `(h(t) - h(t + pi/omega_1)) / 2`, in volts.
pub fn thermal_pairs(
    phys: &Physical,
    transducer: &Transducer,
    offset_sd: f64,
    scale_a: f64,
    seed: u64,
    lane: u8,
    n: usize,
) -> Result<(Vec<f64>, Vec<PulseRecord>)> {
    let half = PI / phys.omega1();
    let out: Vec<(f64, [PulseRecord; 2])> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::for_train(seed, lane, 0, k);
            let s0 = sample_thermal_state(&phys.modes, offset_sd, &mut rng)?;
            let xa = displacement_at(&s0, &phys.modes, 0.0);
            let ha = measure_pulse(xa, transducer, s0.v_off, phys.noise_sd, &mut rng);
            let s1 = evolve_dephase(&s0, &phys.modes, half, &mut rng)?;
            let xb = displacement_at(&s1, &phys.modes, half);
            let hb = measure_pulse(xb, transducer, s1.v_off, phys.noise_sd, &mut rng);
            let rec = |i: u32, t: f64, h: f64| PulseRecord {
                train_id: k,
                pulse_index: i,
                t,
                theta: t * phys.omega1(),
                h_norm: h,
            };
            Ok((scale_a * 0.5 * (ha - hb), [rec(0, 0.0, ha), rec(1, half, hb)]))
        })
        .collect::<Result<_>>()?;
    let values = out.iter().map(|(v, _)| *v).collect();
    let records = out.into_iter().flat_map(|(_, r)| r).collect();
    Ok((values, records))
}

/// Fit the half-period thermal histogram (volts) with the smoothed model.
pub fn fit_thermal(values: &[f64], phys: &Physical, scale_a: f64) -> Result<(BinnedHistogram, CalibrationFit)> {
    let hist = BinnedHistogram::freedman_diaconis(values)?;
    let init = FitInit::from_samples(values)?;
    let noise = (phys.noise_sd / std::f64::consts::SQRT_2).max(1e-6 * scale_a.max(1.0));
    let fit = fit_calibration(&hist, noise, init, LmOptions::default())?;
    Ok((hist, fit))
}

pub fn calibration(config: &ExperimentConfig, phys: &Physical) -> Result<Calibration> {
    match config.calibration.source {
        CalibrationSource::Truth => Ok(Calibration {
            source: CalibrationSource::Truth,
            gain: phys.beta,
            threshold_scale: 1.0,
            fit: None,
        }),
        CalibrationSource::Fit => {
            let a = config.transduction.scale_a_volts;
            // Calibration always runs on resonance.
            let resonant = Transducer::Resonant { beta: phys.beta };
            let (values, _) = thermal_pairs(
                phys,
                &resonant,
                config.transduction.offset_sd_hprime,
                a,
                config.seed,
                LANE_CALIBRATION,
                config.calibration.trains,
            )?;
            let (_, fit) = fit_thermal(&values, phys, a)?;
            let beta_est = fit.sigma_delta / phys.sigma_th;
            let ratio = fit.scale_a / a;
            Ok(Calibration {
                source: CalibrationSource::Fit,
                gain: beta_est * ratio,
                threshold_scale: ratio,
                fit: Some(fit),
            })
        }
    }
}

/// Everything one batch of trains needs.
pub struct Batch<'a> {
    pub phys: &'a Physical,
    pub transducer: Transducer,
    pub calibration: &'a Calibration,
    pub offset_sd: f64,
    pub seed: u64,
    pub lane: u8,
    pub index: u32,
}

impl Batch<'_> {
    fn setup(&self) -> TrainSetup<'_> {
        TrainSetup {
            modes: &self.phys.modes,
            transducer: self.transducer,
            noise_sd: self.phys.noise_sd,
            conversion: self.calibration.conversion(),
            beta: self.phys.beta,
        }
    }

    /// Simulate trains `range` in parallel; results come back in train order.
    pub fn run(
        &self,
        schedule: &PulseSchedule,
        range: Range<u64>,
        keep_pulses: bool,
    ) -> Result<(Vec<ConditionalSample>, Vec<PulseRecord>)> {
        let setup = self.setup();
        let out: Vec<(ConditionalSample, Vec<PulseRecord>)> = range
            .into_par_iter()
            .map(|k| {
                let mut rng = RngStream::for_train(self.seed, self.lane, self.index, k);
                let state = sample_thermal_state(&self.phys.modes, self.offset_sd, &mut rng)?;
                let (records, sample) = run_train(k, state, schedule, &setup, &mut rng)?;
                Ok((sample, if keep_pulses { records } else { Vec::new() }))
            })
            .collect::<Result<_>>()?;
        let mut samples = Vec::with_capacity(out.len());
        let mut pulses = Vec::new();
        for (s, p) in out {
            samples.push(s);
            pulses.extend(p);
        }
        Ok((samples, pulses))
    }
}

/// Recompute the conditional value of a sample for another estimator.
pub fn recondition(s: &ConditionalSample, conditioning: Conditioning, conv: LinearConversion) -> ConditionalSample {
    let x_prep = s.h_prep.map(|h| conv.to_xzpf(h));
    ConditionalSample {
        s_cond: conditional_value(conv.to_xzpf(s.h_tomo), &x_prep, s.theta, conditioning),
        s_cond_second: None,
        ..s.clone()
    }
}

/// Outcome of oversampling one angle.
#[derive(Debug, Clone, Serialize)]
pub struct Collected {
    pub trains: usize,
    pub accepted: usize,
    pub target: usize,
    pub shortfall: bool,
}

/// Run batches of `batch` trains until `selection` keeps `target` samples or
/// `cap` trains have been spent.
pub fn collect_until(
    b: &Batch<'_>,
    schedule: &PulseSchedule,
    batch: usize,
    selection: Option<(Selection, f64)>,
    target: usize,
    cap: usize,
    keep_pulses: bool,
) -> Result<(Vec<ConditionalSample>, Vec<PulseRecord>, Collected)> {
    let mut samples = Vec::new();
    let mut pulses = Vec::new();
    let mut accepted = 0usize;
    let cap = cap.max(batch);
    while samples.len() < cap {
        let start = samples.len() as u64;
        let end = (start + batch as u64).min(cap as u64);
        let (s, p) = b.run(schedule, start..end, keep_pulses)?;
        samples.extend(s);
        pulses.extend(p);
        accepted = match selection {
            None => samples.len(),
            Some((sel, thr)) => match post_select(&samples, sel, thr) {
                Ok((_, st)) => st.n_accepted,
                Err(Error::EmptySelection) => 0,
                Err(e) => return Err(e),
            },
        };
        if selection.is_none() || accepted >= target {
            break;
        }
    }
    let shortfall = selection.is_some() && accepted < target;
    let info = Collected {
        trains: samples.len(),
        accepted,
        target,
        shortfall,
    };
    Ok((samples, pulses, info))
}

/// Post-select, tolerating an empty result.
pub fn select_or_empty(
    samples: &[ConditionalSample],
    selection: Selection,
    threshold: f64,
) -> Result<(Vec<ConditionalSample>, SelectionStats)> {
    match post_select(samples, selection, threshold) {
        Ok(r) => Ok(r),
        Err(Error::EmptySelection) => Ok((
            Vec::new(),
            SelectionStats {
                threshold,
                n_in: samples.len(),
                n_accepted: 0,
                retention: 0.0,
                wrong_branch: 0,
                wrong_branch_fraction: 0.0,
            },
        )),
        Err(e) => Err(e),
    }
}
