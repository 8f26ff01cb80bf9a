//! The five pipeline commands. Each writes its files under the configured
//! output directory and returns a serializable report.

use std::f64::consts::PI;

use serde::Serialize;

use super::config::{ExperimentConfig, Physical};
use super::engine::{
    calibration, collect_until, fit_thermal, recondition, select_or_empty, thermal_pairs, Batch,
    Calibration, Collected, LANE_DECOHERENCE, LANE_NOISE, LANE_SWEEP, LANE_THERMAL, LANE_TOMO,
};
use super::output::OutputDir;
use crate::calibrate::{convolve_noise, model_density, CalibrationFit, UniformGrid};
use crate::condition::{
    decoherence_envelope, full_sequence_variance, gaussian_update, noise_correction, selection_bounds,
    sequence_variance, uncertainty_product, ConditionalSample, Conditioning, GaussianState, NoiseKind,
    PulseSchedule, Selection, SelectionBounds, PREP_PHASES,
};
use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LmOptions};
use crate::params::{effective_temperature, MechMode};
use crate::stats::std_dev;
use crate::tomography::{
    fwhm_contour, inverse_radon, marginal_width, GridSpec, MarginalSet, MarginalWidth, ReconOptions,
    GAUSSIAN_FWHM_PER_SD,
};
use crate::transduce::write_pulses_csv;

fn physical(config: &ExperimentConfig) -> Result<Physical> {
    config.validate()?;
    let phys = config.physical()?;
    for w in phys.snapshot_warnings() {
        log::warn!("{w}");
    }
    Ok(phys)
}

fn prepare(config: &ExperimentConfig, command: &'static str) -> Result<(Physical, Calibration, OutputDir)> {
    let phys = physical(config)?;
    let cal = calibration(config, &phys)?;
    let mut out = OutputDir::create(config, &phys, command)?;
    out.config(config)?;
    Ok((phys, cal, out))
}

fn batch<'a>(config: &ExperimentConfig, phys: &'a Physical, cal: &'a Calibration, lane: u8, index: u32) -> Batch<'a> {
    Batch {
        phys,
        transducer: phys.transducer,
        calibration: cal,
        offset_sd: config.transduction.offset_sd_hprime,
        seed: config.seed,
        lane,
        index,
    }
}

/// Weights and mode-1 phases of the conditional estimate at `theta`.
fn estimate_terms(conditioning: Conditioning, theta: f64) -> (Vec<f64>, Vec<f64>) {
    let mut w = conditioning.prep_weights(theta).to_vec();
    w.push(1.0);
    let mut ph = PREP_PHASES.to_vec();
    ph.push(theta);
    (w, ph)
}

/// Exact SD of the conditional estimate, shot noise included.
pub fn predicted_width(conditioning: Conditioning, theta: f64, modes: &[MechMode], omega1: f64, noise_x: f64) -> f64 {
    let (w, ph) = estimate_terms(conditioning, theta);
    sequence_variance(&w, &ph, omega1, modes, noise_x * noise_x).sqrt()
}

/// Width left by shot noise alone.
pub fn noise_floor_width(conditioning: Conditioning, theta: f64, noise_x: f64) -> f64 {
    let (w, _) = estimate_terms(conditioning, theta);
    noise_x * w.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn selection_threshold(config: &ExperimentConfig, cal: &Calibration) -> f64 {
    config.selection.threshold_hprime * cal.threshold_scale
}

// ---------------------------------------------------------------- thermal

#[derive(Debug, Clone, Serialize)]
pub struct ThermalReport {
    pub n_pairs: usize,
    pub fit: CalibrationFit,
    pub truth_scale_a: f64,
    pub truth_sigma_delta: f64,
    pub scale_a_rel_err: f64,
    pub sigma_delta_rel_err: f64,
    /// Centres of the fullest bin on each side of zero (volts).
    pub histogram_peaks: [f64; 2],
    pub bin_width: f64,
}

#[derive(Serialize)]
struct HistRow {
    bin_center: f64,
    density: f64,
    model_density: f64,
}

pub fn thermal(config: &ExperimentConfig) -> Result<ThermalReport> {
    let phys = physical(config)?;
    let mut out = OutputDir::create(config, &phys, "thermal")?;
    out.config(config)?;
    let a = config.transduction.scale_a_volts;
    let (values, records) = thermal_pairs(
        &phys,
        &phys.transducer,
        config.transduction.offset_sd_hprime,
        a,
        config.seed,
        LANE_THERMAL,
        config.trains,
    )?;
    let (hist, fit) = fit_thermal(&values, &phys, a)?;
    let centers = hist.centers();
    let dens = hist.densities();
    let model = fit.model();
    let pdf = convolve_noise(&model, &UniformGrid::for_model(&model))?;
    let rows: Vec<HistRow> = centers
        .iter()
        .zip(&dens)
        .map(|(&c, &d)| HistRow {
            bin_center: c,
            density: d,
            model_density: model_density(&model, &pdf, c),
        })
        .collect();
    let side_peak = |neg: bool| {
        rows.iter()
            .filter(|r| (r.bin_center < 0.0) == neg)
            .max_by(|x, y| x.density.total_cmp(&y.density))
            .map_or(f64::NAN, |r| r.bin_center)
    };
    let widths = hist.widths();
    let truth_sigma_delta = phys.beta * phys.sigma_th;
    let report = ThermalReport {
        n_pairs: values.len(),
        truth_scale_a: a,
        truth_sigma_delta,
        scale_a_rel_err: fit.scale_a / a - 1.0,
        sigma_delta_rel_err: fit.sigma_delta / truth_sigma_delta - 1.0,
        histogram_peaks: [side_peak(true), side_peak(false)],
        bin_width: widths.iter().sum::<f64>() / widths.len() as f64,
        fit,
    };
    out.csv(
        "thermal_histogram.csv",
        &["bin_center", "density", "model_density"],
        &rows,
        &report,
    )?;
    out.summary("calibration.json", &report)?;
    if config.write_pulses {
        let p = out.path("pulses.csv");
        write_pulses_csv(&p, &records)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------- tomo

/// Tomography panels: which estimator and which readings are thresholded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Panel {
    None,
    NonePostselected,
    OnePulse,
    TwoPulse,
}

impl Panel {
    pub const ALL: [Panel; 4] = [Panel::None, Panel::NonePostselected, Panel::OnePulse, Panel::TwoPulse];

    pub fn as_str(self) -> &'static str {
        match self {
            Panel::None => "none",
            Panel::NonePostselected => "none-postselected",
            Panel::OnePulse => "one-pulse",
            Panel::TwoPulse => "two-pulse",
        }
    }

    pub fn conditioning(self) -> Conditioning {
        match self {
            Panel::None | Panel::NonePostselected => Conditioning::None,
            Panel::OnePulse => Conditioning::OnePulse,
            Panel::TwoPulse => Conditioning::TwoPulse,
        }
    }

    /// Selection applied when post-selection is on.
    pub fn selection(self) -> Option<Selection> {
        match self {
            Panel::None => None,
            Panel::NonePostselected => Some(Selection::Tomography),
            Panel::OnePulse => Some(Selection::Conditioning(Conditioning::OnePulse)),
            Panel::TwoPulse => Some(Selection::Conditioning(Conditioning::TwoPulse)),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WidthRow {
    pub theta: f64,
    pub theta_over_pi: f64,
    pub conditioning: &'static str,
    /// `all`, `conditioning` or `tomography`.
    pub selection: &'static str,
    pub n: usize,
    pub retention: f64,
    pub mc_width: f64,
    pub mc_width_se: f64,
    pub sample_sd: f64,
    pub analytic_width: f64,
    pub second_mode_width: f64,
    pub noise_floor: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PanelSummary {
    pub panel: Panel,
    pub postselected: bool,
    pub counts: Vec<usize>,
    pub mean_fwhm: f64,
    pub fwhm_sd_equivalent: f64,
    pub density_scale: f64,
    /// Raw grid moments; back-projection streaks inflate these.
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    /// Covariance of a Gaussian fitted to the density above 10% of peak.
    pub fitted_cov: Option<[[f64; 2]; 2]>,
    pub fitted_principal_sds: Option<[f64; 2]>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaussianPrediction {
    pub eta_ratio: f64,
    pub sd_x: f64,
    pub sd_y: f64,
    pub uncertainty_product: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TomoReport {
    pub calibration: Calibration,
    pub threshold_true_hprime: f64,
    pub selection_bounds: SelectionBounds,
    pub collected: Vec<Collected>,
    pub widths: Vec<WidthRow>,
    pub panels: Vec<PanelSummary>,
    pub thermal_fwhm: f64,
    /// Mean two-pulse width over angles and its single-mode temperature.
    pub mean_two_pulse_width: f64,
    pub effective_temperature_k: f64,
    pub gaussian_update: GaussianPrediction,
    pub shortfalls: Vec<String>,
}

#[derive(Serialize)]
struct SampleRow {
    train_id: u64,
    theta: f64,
    conditioning: &'static str,
    s_cond_xzpf: f64,
    x_hat: f64,
    y_hat: f64,
    accepted: bool,
}

#[derive(Serialize)]
struct MarginalRow {
    panel: &'static str,
    theta: f64,
    bin_center: f64,
    density: f64,
}

#[derive(Serialize)]
struct DensityRow {
    x: f64,
    p: f64,
    value: f64,
}

fn width_of(samples: &[f64], seed: u64) -> MarginalWidth {
    marginal_width(samples, seed).unwrap_or(MarginalWidth {
        gaussian_sd: f64::NAN,
        sample_sd: if samples.len() > 1 { std_dev(samples) } else { f64::NAN },
        bootstrap_se: f64::NAN,
        n: samples.len(),
    })
}

pub fn tomo(config: &ExperimentConfig) -> Result<TomoReport> {
    let (phys, cal, mut out) = prepare(config, "tomo")?;
    let thr = selection_threshold(config, &cal);
    let post = config.selection.postselect;
    let conv = cal.conversion();
    let omega1 = phys.omega1();
    let noise_x = phys.noise_xzpf();
    let thetas = config.thetas();

    let mut collected = Vec::new();
    let mut widths = Vec::new();
    let mut sample_rows = Vec::new();
    let mut all_pulses = Vec::new();
    let mut shortfalls = Vec::new();
    let mut sets: Vec<MarginalSet> = Panel::ALL.iter().map(|_| MarginalSet::default()).collect();

    for (i, &theta) in thetas.iter().enumerate() {
        let schedule = PulseSchedule::new(theta, Conditioning::TwoPulse)?;
        let b = batch(config, &phys, &cal, LANE_TOMO, i as u32);
        let selection = post.then_some((Selection::Conditioning(Conditioning::TwoPulse), thr));
        let (raw, pulses, info) = collect_until(
            &b,
            &schedule,
            config.trains,
            selection,
            config.selection.accepted_per_angle,
            config.selection.max_trains_per_angle,
            config.write_pulses,
        )?;
        if info.shortfall {
            shortfalls.push(format!(
                "theta = {:.4} pi: {} of {} accepted after {} trains",
                theta / PI,
                info.accepted,
                info.target,
                info.trains
            ));
        }
        all_pulses.extend(pulses);
        collected.push(info);

        let seed_w = config.seed ^ ((i as u64) << 20);
        for c in Conditioning::ALL {
            let all: Vec<ConditionalSample> = raw.iter().map(|s| recondition(s, c, conv)).collect();
            let (w, ph) = estimate_terms(c, theta);
            let analytic = sequence_variance(&w, &ph, omega1, &phys.modes, noise_x * noise_x).sqrt();
            let second = if c == Conditioning::TwoPulse && phys.modes.len() > 1 {
                let m = &phys.modes[1];
                full_sequence_variance(theta, m.omega / omega1, m.quadrature_variance()).sqrt()
            } else {
                sequence_variance(&w, &ph, omega1, phys.modes.get(1..).unwrap_or(&[]), 0.0).sqrt()
            };
            let floor = noise_floor_width(c, theta, noise_x);
            let mut selections: Vec<(&'static str, Option<Selection>)> = vec![("all", None)];
            if post {
                match c {
                    Conditioning::None => selections.push(("tomography", Some(Selection::Tomography))),
                    _ => selections.push(("conditioning", Some(Selection::Conditioning(c)))),
                }
            }
            for (label, sel) in selections {
                let (kept, retention) = match sel {
                    None => (all.clone(), 1.0),
                    Some(s) => {
                        let (k, st) = select_or_empty(&all, s, thr)?;
                        (k, st.retention)
                    }
                };
                let vals: Vec<f64> = kept.iter().map(|s| s.s_cond).collect();
                let mw = width_of(&vals, seed_w ^ c as u64);
                widths.push(WidthRow {
                    theta,
                    theta_over_pi: theta / PI,
                    conditioning: c.as_str(),
                    selection: label,
                    n: vals.len(),
                    retention,
                    mc_width: mw.gaussian_sd,
                    mc_width_se: mw.bootstrap_se,
                    sample_sd: mw.sample_sd,
                    analytic_width: analytic,
                    second_mode_width: second,
                    noise_floor: floor,
                });
            }
        }

        for (k, panel) in Panel::ALL.iter().enumerate() {
            let c = panel.conditioning();
            let all: Vec<ConditionalSample> = raw.iter().map(|s| recondition(s, c, conv)).collect();
            let kept = match (post, panel.selection()) {
                (true, Some(s)) => select_or_empty(&all, s, thr)?.0,
                _ => all.clone(),
            };
            if config.tomography.write_samples && matches!(panel, Panel::None | Panel::OnePulse | Panel::TwoPulse) {
                let ids: std::collections::HashSet<u64> = kept.iter().map(|s| s.train_id).collect();
                for s in &all {
                    sample_rows.push(SampleRow {
                        train_id: s.train_id,
                        theta,
                        conditioning: c.as_str(),
                        s_cond_xzpf: s.s_cond,
                        x_hat: s.x_hat,
                        y_hat: s.y_hat,
                        accepted: ids.contains(&s.train_id),
                    });
                }
            }
            sets[k].push(theta, kept.iter().map(|s| s.s_cond).collect());
        }
    }

    // Reconstructions.
    let mut panels = Vec::new();
    let mut marginal_rows = Vec::new();
    for (panel, set) in Panel::ALL.iter().zip(&sets) {
        match reconstruct(config, *panel, set, post, &mut out, &mut marginal_rows) {
            Ok(s) => panels.push(s),
            Err(e) => {
                log::warn!("panel {}: reconstruction skipped ({e})", panel.as_str());
                shortfalls.push(format!("panel {}: {e}", panel.as_str()));
            }
        }
    }

    let two_rows: Vec<&WidthRow> = widths
        .iter()
        .filter(|r| r.conditioning == "two-pulse" && r.selection == if post { "conditioning" } else { "all" })
        .filter(|r| r.sample_sd.is_finite())
        .collect();
    let mean_two = if two_rows.is_empty() {
        f64::NAN
    } else {
        two_rows.iter().map(|r| r.sample_sd).sum::<f64>() / two_rows.len() as f64
    };
    let eta_ratio = phys.cavity.eta_in / phys.cavity.eta_out;
    let g = gaussian_update(
        &GaussianState::thermal(phys.modes[0].n_th),
        0.0,
        phys.chi,
        eta_ratio,
        config.measurement.omega_kick,
    )?;
    let report = TomoReport {
        threshold_true_hprime: thr,
        selection_bounds: selection_bounds(thr, phys.beta * phys.sigma_th)?,
        collected,
        panels,
        thermal_fwhm: GAUSSIAN_FWHM_PER_SD * phys.sigma_th,
        mean_two_pulse_width: mean_two,
        effective_temperature_k: if mean_two.is_finite() {
            effective_temperature(mean_two, omega1)?
        } else {
            f64::NAN
        },
        gaussian_update: GaussianPrediction {
            eta_ratio,
            sd_x: g.cov[0][0].sqrt(),
            sd_y: g.cov[1][1].sqrt(),
            uncertainty_product: uncertainty_product(phys.chi, eta_ratio),
        },
        calibration: cal,
        shortfalls: shortfalls.clone(),
        widths,
    };

    out.csv(
        "widths.csv",
        &[
            "theta",
            "theta_over_pi",
            "conditioning",
            "selection",
            "n",
            "retention",
            "mc_width",
            "mc_width_se",
            "sample_sd",
            "analytic_width",
            "second_mode_width",
            "noise_floor",
        ],
        &report.widths,
        serde_json::json!({ "threshold_true_hprime": thr, "postselect": post }),
    )?;
    out.csv(
        "marginals.csv",
        &["panel", "theta", "bin_center", "density"],
        &marginal_rows,
        serde_json::json!({ "postselect": post }),
    )?;
    if config.tomography.write_samples {
        out.csv(
            "conditional_samples.csv",
            &["train_id", "theta", "conditioning", "s_cond_xzpf", "x_hat", "y_hat", "accepted"],
            &sample_rows,
            serde_json::json!({ "threshold_true_hprime": thr }),
        )?;
    }
    if config.write_pulses {
        write_pulses_csv(&out.path("pulses.csv"), &all_pulses)?;
    }
    out.summary("tomo_summary.json", &report)?;
    if let Some(first) = shortfalls.first() {
        return Err(Error::Shortfall(format!("{first} ({} total)", shortfalls.len())));
    }
    Ok(report)
}

fn reconstruct(
    config: &ExperimentConfig,
    panel: Panel,
    set: &MarginalSet,
    post: bool,
    out: &mut OutputDir,
    marginal_rows: &mut Vec<MarginalRow>,
) -> Result<PanelSummary> {
    let max_sd = set
        .samples
        .iter()
        .filter(|s| s.len() > 1)
        .map(|s| std_dev(s))
        .fold(0.0_f64, f64::max);
    if !(max_sd > 0.0) {
        return Err(Error::Statistics("no marginal has a positive width".into()));
    }
    let half = 4.0 * max_sd;
    let step = half / config.tomography.half_points.max(2) as f64;
    let proj_half = half * std::f64::consts::SQRT_2 + step;
    let proj = set.bin(proj_half, step)?;
    for (a, row) in proj.angles.iter().zip(&proj.values) {
        for (k, v) in row.iter().enumerate() {
            marginal_rows.push(MarginalRow {
                panel: panel.as_str(),
                theta: *a,
                bin_center: proj.axis.point(k),
                density: *v,
            });
        }
    }
    let grid = GridSpec { half_width: half, step };
    let opts = ReconOptions {
        hann: config.tomography.hann,
        angular_upsample: config.tomography.angular_upsample,
    };
    let density = inverse_radon(&proj, &grid, &opts)?;
    let contour = fwhm_contour(&density)?;
    let (mean, cov) = density.moments();
    let mut warnings = contour.warnings.clone();
    let fitted = match density.gaussian_fit(0.1) {
        Ok(g) => Some(g),
        Err(e) => {
            warnings.push(format!("gaussian fit failed: {e}"));
            None
        }
    };
    let n = density.n();
    let rows: Vec<DensityRow> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| DensityRow {
            x: density.axis.point(i),
            p: density.axis.point(j),
            value: density.at(i, j),
        })
        .collect();
    let summary = PanelSummary {
        panel,
        postselected: post && panel.selection().is_some(),
        counts: set.counts(),
        mean_fwhm: contour.mean_fwhm,
        fwhm_sd_equivalent: contour.mean_fwhm / GAUSSIAN_FWHM_PER_SD,
        density_scale: density.scale,
        mean,
        cov,
        fitted_cov: fitted.as_ref().map(|g| g.cov),
        fitted_principal_sds: fitted.as_ref().map(|g| g.principal_sds()),
        warnings,
    };
    out.csv(
        &format!("density_{}.csv", panel.as_str().replace('-', "_")),
        &["x", "p", "value"],
        &rows,
        serde_json::json!({ "summary": &summary, "grid": grid, "contour": contour.points }),
    )?;
    Ok(summary)
}

// ---------------------------------------------------------------- decoherence

#[derive(Debug, Clone, Serialize)]
pub struct DecoherenceRow {
    pub n: u32,
    pub offset_ns: f64,
    pub theta: f64,
    pub t_us: f64,
    pub trains: usize,
    pub mc_width: f64,
    pub mc_width_se: f64,
    pub envelope: f64,
    pub analytic_width: f64,
    pub analytic_width_no_decay: f64,
    pub noise_floor: f64,
    pub width_at_2pi: f64,
    pub width_at_2pi_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaFit {
    pub gamma_fit_hz: f64,
    pub gamma_fit_se_hz: Option<f64>,
    pub gamma_true_hz: f64,
    pub rel_err: f64,
    pub reduced_chi2: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecoherenceReport {
    pub conditioning: Conditioning,
    pub rows: Vec<DecoherenceRow>,
    pub fit: Option<GammaFit>,
}

pub fn decoherence(config: &ExperimentConfig) -> Result<DecoherenceReport> {
    let (phys, cal, mut out) = prepare(config, "decoherence")?;
    if config.schedule.decoherence_n.is_empty() {
        return Err(Error::Config("schedule.decoherence_n is empty".into()));
    }
    let cond = config.schedule.conditioning;
    let thr = selection_threshold(config, &cal);
    let omega1 = phys.omega1();
    let noise_x = phys.noise_xzpf();
    let still: Vec<MechMode> = phys.modes.iter().map(|m| MechMode { gamma_decay: 0.0, ..*m }).collect();
    let mut rows = Vec::new();
    let mut index = 0u32;
    for &n in &config.schedule.decoherence_n {
        for &off in &config.schedule.offsets_ns {
            let theta = 2.0 * PI * n as f64 + omega1 * off * 1e-9;
            let mut schedule = PulseSchedule::new(theta, cond)?;
            if config.schedule.dual_tomography && (theta - 2.0 * PI).abs() > 1e-9 {
                schedule = schedule.with_second(2.0 * PI)?;
            }
            let b = batch(config, &phys, &cal, LANE_DECOHERENCE, index);
            let selection = config.selection.postselect.then_some((Selection::Conditioning(cond), thr));
            let (raw, _, info) = collect_until(
                &b,
                &schedule,
                config.trains,
                selection,
                config.selection.accepted_per_angle,
                config.selection.max_trains_per_angle,
                false,
            )?;
            let kept = match selection {
                Some((s, t)) => select_or_empty(&raw, s, t)?.0,
                None => raw,
            };
            let seed_w = config.seed ^ ((index as u64) << 24);
            let vals: Vec<f64> = kept.iter().map(|s| s.s_cond).collect();
            let mw = width_of(&vals, seed_w);
            let second: Vec<f64> = kept.iter().filter_map(|s| s.s_cond_second).collect();
            let mw2 = if second.is_empty() { None } else { Some(width_of(&second, seed_w ^ 1)) };
            let t = theta / omega1;
            let m1 = &phys.modes[0];
            rows.push(DecoherenceRow {
                n,
                offset_ns: off,
                theta,
                t_us: t * 1e6,
                trains: info.trains,
                mc_width: mw.sample_sd,
                mc_width_se: mw.bootstrap_se,
                envelope: decoherence_envelope(t, m1.gamma_decay, m1.n_th)?,
                analytic_width: predicted_width(cond, theta, &phys.modes, omega1, noise_x),
                analytic_width_no_decay: predicted_width(cond, theta, &still, omega1, noise_x),
                noise_floor: noise_floor_width(cond, theta, noise_x),
                width_at_2pi: mw2.map_or(f64::NAN, |w| w.sample_sd),
                width_at_2pi_se: mw2.map_or(f64::NAN, |w| w.bootstrap_se),
            });
            index += 1;
        }
    }
    let fit = fit_gamma(&rows, &phys, cond).map_err(|e| log::warn!("decay-rate fit failed: {e}")).ok();
    let report = DecoherenceReport { conditioning: cond, rows, fit };
    out.csv(
        "decoherence.csv",
        &[
            "n",
            "offset_ns",
            "theta",
            "t_us",
            "trains",
            "mc_width",
            "mc_width_se",
            "envelope",
            "analytic_width",
            "analytic_width_no_decay",
            "noise_floor",
            "width_at_2pi",
            "width_at_2pi_se",
        ],
        &report.rows,
        serde_json::json!({ "conditioning": cond }),
    )?;
    out.summary("decoherence_fit.json", &report.fit)?;
    Ok(report)
}

/// One-parameter fit of a common energy decay rate to the measured widths.
pub fn fit_gamma(rows: &[DecoherenceRow], phys: &Physical, cond: Conditioning) -> Result<GammaFit> {
    let pts: Vec<&DecoherenceRow> = rows
        .iter()
        .filter(|r| r.mc_width.is_finite() && r.mc_width_se > 0.0)
        .collect();
    if pts.len() < 2 {
        return Err(Error::Statistics("need at least two scan points to fit the decay rate".into()));
    }
    let omega1 = phys.omega1();
    let noise_x = phys.noise_xzpf();
    let gamma_true = phys.modes.iter().map(|m| m.gamma_decay).sum::<f64>() / phys.modes.len() as f64;
    let model = |gamma: f64, theta: f64| {
        let modes: Vec<MechMode> = phys.modes.iter().map(|m| MechMode { gamma_decay: gamma, ..*m }).collect();
        predicted_width(cond, theta, &modes, omega1, noise_x)
    };
    let residuals = |p: &[f64]| -> Vec<f64> {
        let g = p[0].exp();
        pts.iter().map(|r| (r.mc_width - model(g, r.theta)) / r.mc_width_se).collect()
    };
    let g0 = if gamma_true > 0.0 { gamma_true } else { 2.0 * PI * 100.0 };
    let rep = levenberg_marquardt(residuals, &[g0.ln()], LmOptions::default())?;
    let gamma = rep.params[0].exp();
    let dof = (pts.len() - 1).max(1) as f64;
    let red = rep.chi2 / dof;
    let se = rep
        .covariance
        .as_ref()
        .map(|c| gamma * (c[0][0] * red.max(1.0)).sqrt() / (2.0 * PI));
    Ok(GammaFit {
        gamma_fit_hz: gamma / (2.0 * PI),
        gamma_fit_se_hz: se,
        gamma_true_hz: gamma_true / (2.0 * PI),
        rel_err: if gamma_true > 0.0 { gamma / gamma_true - 1.0 } else { f64::NAN },
        reduced_chi2: red,
        iterations: rep.iterations,
    })
}

// ---------------------------------------------------------------- noise floor

#[derive(Debug, Clone, Serialize)]
pub struct NoiseFloorRow {
    pub theta: f64,
    pub trains: usize,
    pub conditional_width: f64,
    pub conditional_width_se: f64,
    pub nonconditional_width: f64,
    pub nonconditional_width_se: f64,
    pub single_pulse_width: f64,
    pub conditional_ratio: f64,
    pub nonconditional_ratio: f64,
    pub corrected_from_conditional: f64,
    pub corrected_from_nonconditional: f64,
    pub sigma_m: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseFloorReport {
    pub rows: Vec<NoiseFloorRow>,
    pub expected_conditional_ratio: f64,
    pub expected_nonconditional_ratio: f64,
}

pub fn noise_floor(config: &ExperimentConfig) -> Result<NoiseFloorReport> {
    let (phys, cal, mut out) = prepare(config, "noise-floor")?;
    let conv = cal.conversion();
    let mut rows = Vec::new();
    for (i, theta) in config.thetas().into_iter().enumerate() {
        let schedule = PulseSchedule::new(theta, Conditioning::TwoPulse)?;
        let b = batch(config, &phys, &cal, LANE_NOISE, i as u32);
        let (raw, _) = b.run(&schedule, 0..config.trains as u64, false)?;
        let seed_w = config.seed ^ ((i as u64) << 28);
        let two: Vec<f64> = raw.iter().map(|s| s.s_cond).collect();
        let none: Vec<f64> = raw
            .iter()
            .map(|s| recondition(s, Conditioning::None, conv).s_cond)
            .collect();
        let single: Vec<f64> = raw
            .iter()
            .map(|s| conv.to_xzpf(s.h_prep[3] - s.h_prep[2]))
            .collect();
        let wc = width_of(&two, seed_w);
        let wn = width_of(&none, seed_w ^ 1);
        let sp = std_dev(&single) / std::f64::consts::SQRT_2;
        rows.push(NoiseFloorRow {
            theta,
            trains: raw.len(),
            conditional_width: wc.sample_sd,
            conditional_width_se: wc.bootstrap_se,
            nonconditional_width: wn.sample_sd,
            nonconditional_width_se: wn.bootstrap_se,
            single_pulse_width: sp,
            conditional_ratio: wc.sample_sd / sp,
            nonconditional_ratio: wn.sample_sd / sp,
            corrected_from_conditional: wc.sample_sd / noise_correction(NoiseKind::TwoPulse).sqrt(),
            corrected_from_nonconditional: wn.sample_sd / noise_correction(NoiseKind::NonConditional).sqrt(),
            sigma_m: phys.sigma_m,
        });
    }
    let report = NoiseFloorReport {
        rows,
        expected_conditional_ratio: noise_correction(NoiseKind::TwoPulse).sqrt(),
        expected_nonconditional_ratio: noise_correction(NoiseKind::NonConditional).sqrt(),
    };
    out.csv(
        "noise_floor.csv",
        &[
            "theta",
            "trains",
            "conditional_width",
            "conditional_width_se",
            "nonconditional_width",
            "nonconditional_width_se",
            "single_pulse_width",
            "conditional_ratio",
            "nonconditional_ratio",
            "corrected_from_conditional",
            "corrected_from_nonconditional",
            "sigma_m",
        ],
        &report.rows,
        serde_json::json!({
            "expected_conditional_ratio": report.expected_conditional_ratio,
            "expected_nonconditional_ratio": report.expected_nonconditional_ratio,
        }),
    )?;
    out.summary("noise_floor_summary.json", &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub threshold_hprime: f64,
    pub theta: f64,
    pub n: usize,
    pub retention: f64,
    pub wrong_branch_fraction: f64,
    pub width: f64,
    pub width_se: f64,
    pub analytic_width: f64,
}

pub fn sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let (phys, cal, mut out) = prepare(config, "sweep")?;
    if config.sweep.thresholds_hprime.is_empty() {
        return Err(Error::Config("sweep.thresholds_hprime is empty".into()));
    }
    let noise_x = phys.noise_xzpf();
    let mut rows = Vec::new();
    for (i, theta) in config.thetas().into_iter().enumerate() {
        let schedule = PulseSchedule::new(theta, Conditioning::TwoPulse)?;
        let b = batch(config, &phys, &cal, LANE_SWEEP, i as u32);
        let (raw, _) = b.run(&schedule, 0..config.trains as u64, false)?;
        let analytic = predicted_width(Conditioning::TwoPulse, theta, &phys.modes, phys.omega1(), noise_x);
        for (k, &t) in config.sweep.thresholds_hprime.iter().enumerate() {
            let thr = t * cal.threshold_scale;
            let (kept, st) = select_or_empty(&raw, Selection::Conditioning(Conditioning::TwoPulse), thr)?;
            let vals: Vec<f64> = kept.iter().map(|s| s.s_cond).collect();
            let w = width_of(&vals, config.seed ^ ((i as u64) << 16) ^ k as u64);
            rows.push(SweepRow {
                threshold_hprime: t,
                theta,
                n: st.n_accepted,
                retention: st.retention,
                wrong_branch_fraction: st.wrong_branch_fraction,
                width: w.sample_sd,
                width_se: w.bootstrap_se,
                analytic_width: analytic,
            });
        }
    }
    out.csv(
        "sweep.csv",
        &[
            "threshold_hprime",
            "theta",
            "n",
            "retention",
            "wrong_branch_fraction",
            "width",
            "width_se",
            "analytic_width",
        ],
        &rows,
        serde_json::json!({ "trains_per_angle": config.trains }),
    )?;
    Ok(rows)
}
