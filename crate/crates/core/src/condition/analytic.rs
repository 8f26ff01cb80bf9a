//! Closed-form variances of the conditional estimators and the simulated
//! estimators they describe.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechsim::{evolve_dephase, sample_thermal_state, QuadratureState, RngStream};
use crate::params::MechMode;

/// Divisor that turns a measured noise-floor variance into the single-pulse
/// variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    TwoPulse,
    NonConditional,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-pulse" => Ok(NoiseKind::TwoPulse),
            "non-conditional" => Ok(NoiseKind::NonConditional),
            other => Err(Error::invalid(format!("unknown noise-floor kind '{other}'"))),
        }
    }
}

pub fn noise_correction(kind: NoiseKind) -> f64 {
    match kind {
        NoiseKind::TwoPulse => 7.0 / 4.0,
        NoiseKind::NonConditional => 5.0 / 4.0,
    }
}

/// Single-pulse width implied by a measured noise-floor width.
pub fn single_pulse_width(measured_width: f64, kind: NoiseKind) -> f64 {
    measured_width / noise_correction(kind).sqrt()
}

/// Idealized estimators built from a tomography reading `x(theta)` and
/// preparation readings `x(0)`, `x(pi/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// `x(theta) - x(0)`
    Diff,
    /// `x(theta) - cos(theta) x(0)`
    OnePulse,
    /// `x(theta) - cos(theta) x(0) - sin(theta) x(pi/2)`
    TwoPulse,
    /// Two-pulse with the second mode's preparation phase taken as exactly
    /// `pi/2`, valid for frequency ratios close to one.
    TwoPulseNearDegenerate,
}

/// One mode's contribution: frequency ratio to mode 1, dephasing rate
/// `gamma = Gamma/2` and quadrature variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeTerm {
    pub ratio: f64,
    pub gamma: f64,
    pub var_q: f64,
}

impl ModeTerm {
    pub fn from_mode(mode: &MechMode, omega_ref: f64) -> Self {
        ModeTerm {
            ratio: mode.omega / omega_ref,
            gamma: mode.dephasing_rate(),
            var_q: mode.quadrature_variance(),
        }
    }

    pub fn from_modes(modes: &[MechMode]) -> Vec<ModeTerm> {
        match modes.first() {
            Some(m1) => modes.iter().map(|m| ModeTerm::from_mode(m, m1.omega)).collect(),
            None => Vec::new(),
        }
    }
}

/// Variance factor (multiplying `Var(Q)`) of one mode of frequency ratio `r`
/// after dephasing for `gamma_t`.
pub fn mode_factor(kind: Estimator, theta: f64, r: f64, gamma_t: f64) -> f64 {
    let e = (-gamma_t).exp();
    let (st, ct) = theta.sin_cos();
    let (srt, crt) = (r * theta).sin_cos();
    match kind {
        Estimator::Diff => 2.0 - 2.0 * e * crt,
        Estimator::OnePulse => 1.0 + ct * ct - 2.0 * e * ct * crt,
        Estimator::TwoPulse => {
            let (s, c) = (0.5 * PI * r).sin_cos();
            2.0 + 2.0 * c * st * ct - 2.0 * e * (ct * crt + s * st * srt + c * st * crt)
        }
        Estimator::TwoPulseNearDegenerate => 2.0 - 2.0 * e * (ct * crt + st * srt),
    }
}

/// Closed-form variance (x_zpf^2) of an idealized estimator summed over modes.
/// `t` is the dephasing time between preparation and tomography.
pub fn analytic_variance(kind: Estimator, theta: f64, t: f64, modes: &[ModeTerm]) -> f64 {
    modes
        .iter()
        .map(|m| mode_factor(kind, theta, m.ratio, m.gamma * t) * m.var_q)
        .sum()
}

/// Second-mode variance of the complete two-pulse sequence (four preparation
/// pulses plus offset subtraction) without dephasing, in units of `Var(Q2)`
/// when `var_q2 = 1`.
pub fn full_sequence_variance(theta: f64, r: f64, var_q2: f64) -> f64 {
    let (st, ct) = theta.sin_cos();
    let b1 = 2.0 * ct + (1.0 - 2.0 * ct) * (PI * r).cos() - 4.0 * (theta * r).cos()
        + (2.0 * st + 1.0) * (1.5 * PI * r).cos()
        + (1.0 - 2.0 * st) * (2.5 * PI * r).cos()
        + 1.0;
    let b2 = (2.0 * st + 1.0) * (1.5 * PI * r).sin()
        + (1.0 - 2.0 * st) * (2.5 * PI * r).sin()
        + 4.0 * (theta * r).sin()
        + (1.0 - 2.0 * ct) * (PI * r).sin();
    (b1 * b1 + b2 * b2) / 16.0 * var_q2
}

/// Exact variance of a linear combination `sum_a c_a x(t_a) + noise` of
/// pulse readings at mode-1 phases `phases`, for stationary dephasing modes
/// and independent per-pulse noise of variance `noise_var`.
pub fn sequence_variance(
    weights: &[f64],
    phases: &[f64],
    omega1: f64,
    modes: &[MechMode],
    noise_var: f64,
) -> f64 {
    assert_eq!(weights.len(), phases.len());
    let mut var = noise_var * weights.iter().map(|c| c * c).sum::<f64>();
    for mode in modes {
        let g = mode.dephasing_rate();
        let r = mode.omega / omega1;
        let mut acc = 0.0;
        for (a, (&ca, &pa)) in weights.iter().zip(phases).enumerate() {
            for (&cb, &pb) in weights[a..].iter().zip(&phases[a..]) {
                let d = pa - pb;
                let k = (-g * d.abs() / omega1).exp() * (r * d).cos();
                acc += if pa == pb { ca * cb * k } else { 2.0 * ca * cb * k };
            }
        }
        var += mode.quadrature_variance() * acc;
    }
    var
}

/// Minimum conditional width allowed by dephasing of two identical modes:
/// `sqrt(8 n_th (1 - exp(-t Gamma/2)))`.
pub fn decoherence_envelope(t: f64, gamma_decay: f64, n_th: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("t must be non-negative, got {t}")));
    }
    Ok((8.0 * n_th * -(-0.5 * t * gamma_decay).exp_m1()).sqrt())
}

/// Monte-Carlo samples of an idealized estimator: preparation readings from
/// the state at time 0, tomography after OU dephasing for `t` at per-mode
/// phases `r_i theta`. Noise-free.
pub fn ideal_estimator_samples(
    kind: Estimator,
    theta: f64,
    t: f64,
    modes: &[MechMode],
    trains: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let omega1 = modes
        .first()
        .ok_or_else(|| Error::invalid("at least one mode is required"))?
        .omega;
    let ratios: Vec<f64> = modes.iter().map(|m| m.omega / omega1).collect();
    let read = |s: &QuadratureState, phase: f64| -> f64 {
        s.quadratures
            .iter()
            .zip(&ratios)
            .map(|(&(x, y), r)| {
                let (sn, cs) = (r * phase).sin_cos();
                x * cs + y * sn
            })
            .sum()
    };
    let (st, ct) = theta.sin_cos();
    (0..trains as u64)
        .map(|k| {
            let mut rng = RngStream::new(seed, k);
            let s0 = sample_thermal_state(modes, 0.0, &mut rng)?;
            let x0 = read(&s0, 0.0);
            let xq = read(&s0, 0.5 * PI);
            let s1 = evolve_dephase(&s0, modes, t, &mut rng)?;
            let xt = read(&s1, theta);
            Ok(match kind {
                Estimator::Diff => xt - x0,
                Estimator::OnePulse => xt - ct * x0,
                Estimator::TwoPulse | Estimator::TwoPulseNearDegenerate => xt - ct * x0 - st * xq,
            })
        })
        .collect()
}
