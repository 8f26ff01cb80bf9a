//! The five-pulse preparation/tomography train and the conditional signal.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechsim::{displacement_at, evolve_dephase, QuadratureState, RngStream};
use crate::params::MechMode;
use crate::transduce::{measure_pulse, PulseRecord, Transducer};

/// Mode-1 phases of the preparation pulses: `-Y`, `+Y`, `-X`, `+X`.
pub const PREP_PHASES: [f64; 4] = [-2.5 * PI, -1.5 * PI, -PI, 0.0];

/// Which quadrature estimates are subtracted from the tomography pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    /// Offset subtraction only.
    None,
    /// Subtract the X estimate.
    OnePulse,
    /// Subtract both quadrature estimates.
    TwoPulse,
}

impl Conditioning {
    pub const ALL: [Conditioning; 3] = [Conditioning::None, Conditioning::OnePulse, Conditioning::TwoPulse];

    pub fn as_str(self) -> &'static str {
        match self {
            Conditioning::None => "none",
            Conditioning::OnePulse => "one-pulse",
            Conditioning::TwoPulse => "two-pulse",
        }
    }

    /// Weights `(c0, c1, c2, c3)` of the four preparation pulses in the
    /// conditional signal; the tomography pulse has weight 1.
    pub fn prep_weights(self, theta: f64) -> [f64; 4] {
        let (s, c) = theta.sin_cos();
        let (s, c) = match self {
            Conditioning::None => (0.0, 0.0),
            Conditioning::OnePulse => (0.0, c),
            Conditioning::TwoPulse => (s, c),
        };
        [0.5 * s - 0.25, -0.5 * s - 0.25, 0.5 * c - 0.25, -0.5 * c - 0.25]
    }

    /// Preparation pulses whose readings enter the quadrature estimates.
    pub fn used_prep_pulses(self) -> &'static [usize] {
        match self {
            Conditioning::None => &[],
            Conditioning::OnePulse => &[2, 3],
            Conditioning::TwoPulse => &[0, 1, 2, 3],
        }
    }
}

impl std::str::FromStr for Conditioning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Conditioning::None),
            "one-pulse" => Ok(Conditioning::OnePulse),
            "two-pulse" => Ok(Conditioning::TwoPulse),
            other => Err(Error::invalid(format!("unknown conditioning '{other}'"))),
        }
    }
}

/// Four preparation pulses at fixed phases followed by one or two tomography
/// pulses at mode-1 phase `theta` (and `theta_second`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub theta: f64,
    pub theta_second: Option<f64>,
    pub conditioning: Conditioning,
}

impl PulseSchedule {
    pub fn new(theta: f64, conditioning: Conditioning) -> Result<Self> {
        let s = PulseSchedule {
            theta,
            theta_second: None,
            conditioning,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_second(mut self, theta_second: f64) -> Result<Self> {
        self.theta_second = Some(theta_second);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for th in std::iter::once(self.theta).chain(self.theta_second) {
            if !(th > 0.0) || !th.is_finite() {
                return Err(Error::invalid(format!("tomography angle must be positive, got {th}")));
            }
        }
        Ok(())
    }

    /// Mode-1 phases of all pulses in time order; tomography pulses come last.
    pub fn phases(&self) -> Vec<f64> {
        let mut tomo: Vec<f64> = std::iter::once(self.theta).chain(self.theta_second).collect();
        tomo.sort_by(|a, b| a.total_cmp(b));
        PREP_PHASES.iter().copied().chain(tomo).collect()
    }
}

/// Converts normalized detector output to displacement in the linear regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearConversion {
    /// H' per x_zpf.
    pub gain: f64,
}

impl LinearConversion {
    pub fn to_xzpf(&self, h: f64) -> f64 {
        h / self.gain
    }
}

/// Conditional signal of one train, with the raw readings kept for
/// post-selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalSample {
    pub train_id: u64,
    pub theta: f64,
    /// Conditional value at `theta` (x_zpf).
    pub s_cond: f64,
    /// Conditional value at the second tomography angle, if scheduled.
    pub s_cond_second: Option<f64>,
    pub x_hat: f64,
    pub y_hat: f64,
    /// Raw H' of the four preparation pulses.
    pub h_prep: [f64; 4],
    /// Raw H' of the tomography pulse at `theta`.
    pub h_tomo: f64,
    /// Whether the true displacement at each preparation pulse sat on the
    /// lower (linear) branch, `|beta x| < 1`.
    pub lower_branch: [bool; 4],
}

/// `s - X cos(theta) - Y sin(theta) - sum(P)/4` with the trig terms dropped
/// according to `conditioning`. All quantities in the same units.
pub fn conditional_value(tomo: f64, prep: &[f64; 4], theta: f64, conditioning: Conditioning) -> f64 {
    let w = conditioning.prep_weights(theta);
    tomo + prep.iter().zip(w).map(|(p, c)| p * c).sum::<f64>()
}

/// Inputs shared by every train of a run.
#[derive(Debug, Clone)]
pub struct TrainSetup<'a> {
    pub modes: &'a [MechMode],
    pub transducer: Transducer,
    /// Shot-noise SD (H' units).
    pub noise_sd: f64,
    pub conversion: LinearConversion,
    /// Displacement-per-x_zpf of the transducer, used to flag the branch.
    pub beta: f64,
}

/// Simulate one train starting from `state` (amplitudes referenced to the
/// first pulse). Modes advance at their own frequency; dephasing acts over the
/// physical gaps.
pub fn run_train(
    train_id: u64,
    state: QuadratureState,
    schedule: &PulseSchedule,
    setup: &TrainSetup<'_>,
    rng: &mut RngStream,
) -> Result<(Vec<PulseRecord>, ConditionalSample)> {
    schedule.validate()?;
    let omega1 = setup
        .modes
        .first()
        .ok_or_else(|| Error::invalid("at least one mode is required"))?
        .omega;
    let phases = schedule.phases();
    let mut records = Vec::with_capacity(phases.len());
    let mut state = state;
    let t0 = phases[0] / omega1;
    state.epoch = t0;
    let mut lower_branch = [true; 4];
    for (k, &phase) in phases.iter().enumerate() {
        let t = phase / omega1;
        state = evolve_dephase(&state, setup.modes, t - state.epoch, rng)?;
        let x = displacement_at(&state, setup.modes, t);
        if k < 4 {
            lower_branch[k] = (setup.beta * x).abs() < 1.0;
        }
        let h = measure_pulse(x, &setup.transducer, state.v_off, setup.noise_sd, rng);
        records.push(PulseRecord {
            train_id,
            pulse_index: k as u32,
            t,
            theta: phase,
            h_norm: h,
        });
    }

    let h_prep = [records[0].h_norm, records[1].h_norm, records[2].h_norm, records[3].h_norm];
    let x_prep = h_prep.map(|h| setup.conversion.to_xzpf(h));
    let tomo_h = |theta: f64| -> f64 {
        records[4..]
            .iter()
            .find(|r| r.theta == theta)
            .map(|r| r.h_norm)
            .expect("scheduled tomography pulse")
    };
    let h_tomo = tomo_h(schedule.theta);
    let cond = |th: f64| {
        conditional_value(
            setup.conversion.to_xzpf(tomo_h(th)),
            &x_prep,
            th,
            schedule.conditioning,
        )
    };
    let sample = ConditionalSample {
        train_id,
        theta: schedule.theta,
        s_cond: cond(schedule.theta),
        s_cond_second: schedule.theta_second.map(cond),
        x_hat: 0.5 * (x_prep[3] - x_prep[2]),
        y_hat: 0.5 * (x_prep[1] - x_prep[0]),
        h_prep,
        h_tomo,
        lower_branch,
    };
    Ok((records, sample))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechsim::sample_thermal_state;
    use crate::params::presets;

    fn setup(modes: &[MechMode], transducer: Transducer, noise_sd: f64) -> TrainSetup<'_> {
        TrainSetup {
            modes,
            transducer,
            noise_sd,
            conversion: LinearConversion { gain: 1.0 },
            beta: 1e-3,
        }
    }

    #[test]
    fn prep_weights_match_estimator() {
        let prep = [0.3, -1.1, 2.0, 0.7];
        let theta: f64 = 1.234;
        let x = 0.5 * (prep[3] - prep[2]);
        let y = 0.5 * (prep[1] - prep[0]);
        let off: f64 = prep.iter().sum::<f64>() / 4.0;
        let s = 5.0;
        let expect = s - x * theta.cos() - y * theta.sin() - off;
        assert!((conditional_value(s, &prep, theta, Conditioning::TwoPulse) - expect).abs() < 1e-12);
        let expect1 = s - x * theta.cos() - off;
        assert!((conditional_value(s, &prep, theta, Conditioning::OnePulse) - expect1).abs() < 1e-12);
        assert!((conditional_value(s, &prep, theta, Conditioning::None) - (s - off)).abs() < 1e-12);
    }

    #[test]
    fn prep_noise_weights_sum_to_three_quarters() {
        for k in 0..50 {
            let th = 0.13 * k as f64;
            let w = Conditioning::TwoPulse.prep_weights(th);
            let ss: f64 = w.iter().map(|c| c * c).sum();
            assert!((ss - 0.75).abs() < 1e-12);
        }
        let w = Conditioning::None.prep_weights(1.0);
        assert!((w.iter().map(|c| c * c).sum::<f64>() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn schedule_rejects_non_positive_angles() {
        assert!(PulseSchedule::new(0.0, Conditioning::TwoPulse).is_err());
        assert!(PulseSchedule::new(-1.0, Conditioning::TwoPulse).is_err());
        let s = PulseSchedule::new(PI, Conditioning::TwoPulse).unwrap();
        assert!(s.with_second(f64::NAN).is_err());
        let p = s.with_second(2.0 * PI).unwrap().phases();
        assert_eq!(p.len(), 6);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn noiseless_single_mode_is_perfectly_predicted() {
        let modes = vec![MechMode::from_hz(3.1081e6, 0.0, 3.2).unwrap()];
        let su = setup(&modes, Transducer::Linear { beta: 1.0 }, 0.0);
        let mut rng = RngStream::new(5, 0);
        for k in 0..20 {
            let theta = 0.1 + 0.7 * k as f64;
            let sched = PulseSchedule::new(theta, Conditioning::TwoPulse).unwrap();
            let mut state = sample_thermal_state(&modes, 0.3, &mut rng).unwrap();
            state.v_off = 0.3 * rng.normal();
            let (records, s) = run_train(k, state, &sched, &su, &mut rng).unwrap();
            assert_eq!(records.len(), 5);
            assert!(s.s_cond.abs() < 1e-9 * 300.0, "theta {theta}: {}", s.s_cond);
        }
    }

    #[test]
    fn estimates_are_pulse_differences() {
        let modes = presets::tomography_modes(400.0);
        let su = setup(&modes, Transducer::Linear { beta: 1.0 }, 3.0);
        let mut rng = RngStream::new(6, 0);
        let sched = PulseSchedule::new(PI, Conditioning::TwoPulse).unwrap();
        let state = sample_thermal_state(&modes, 0.0, &mut rng).unwrap();
        let (r, s) = run_train(0, state, &sched, &su, &mut rng).unwrap();
        assert_eq!(s.x_hat, 0.5 * (r[3].h_norm - r[2].h_norm));
        assert_eq!(s.y_hat, 0.5 * (r[1].h_norm - r[0].h_norm));
        assert_eq!(r[3].t, 0.0);
    }

    #[test]
    fn offset_cancels() {
        let modes = presets::tomography_modes(400.0);
        let su = setup(&modes, Transducer::Linear { beta: 1.0 }, 0.5);
        let sched = PulseSchedule::new(2.7, Conditioning::TwoPulse).unwrap();
        for cond in Conditioning::ALL {
            let sched = PulseSchedule { conditioning: cond, ..sched };
            let base = sample_thermal_state(&modes, 0.0, &mut RngStream::new(1, 1)).unwrap();
            let shifted = QuadratureState { v_off: 1234.5, ..base.clone() };
            let (_, a) = run_train(0, base, &sched, &su, &mut RngStream::new(2, 2)).unwrap();
            let (_, b) = run_train(0, shifted, &sched, &su, &mut RngStream::new(2, 2)).unwrap();
            assert!((a.s_cond - b.s_cond).abs() < 1e-12 * 1234.5 * 4.0, "{cond:?}");
        }
    }

    #[test]
    fn second_tomography_pulse() {
        let modes = vec![MechMode::from_hz(3.09e6, 0.0, 3.2).unwrap()];
        let su = setup(&modes, Transducer::Linear { beta: 1.0 }, 0.0);
        let sched = PulseSchedule::new(20.0 * PI, Conditioning::TwoPulse)
            .unwrap()
            .with_second(2.0 * PI)
            .unwrap();
        let state = sample_thermal_state(&modes, 0.0, &mut RngStream::new(3, 0)).unwrap();
        let (r, s) = run_train(0, state, &sched, &su, &mut RngStream::new(3, 1)).unwrap();
        assert_eq!(r.len(), 6);
        assert!(s.s_cond.abs() < 1e-6);
        assert!(s.s_cond_second.unwrap().abs() < 1e-6);
        assert_eq!(s.h_tomo, r[5].h_norm);
    }
}
