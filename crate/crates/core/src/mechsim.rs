//! Thermal quadrature sampling and stochastic evolution of the mechanical modes.
//!
//! Each mode's motion is `X cos(omega t) + Y sin(omega t)` with slowly varying
//! quadrature amplitudes. Between pulses the amplitudes follow independent
//! Ornstein-Uhlenbeck processes at rate `gamma = Gamma / 2`, which gives the
//! autocovariance `exp(-gamma t) * 2 n_th` and keeps the thermal variance
//! stationary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::params::MechMode;

/// Counter-based random stream: `(seed, stream_id)` always yields the same
/// sequence, independent of which thread consumes it or in which order.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    /// Stream id built from an experiment lane, a sub-index (e.g. angle) and a
    /// train index so that distinct experiments never share a stream.
    pub fn for_train(seed: u64, lane: u8, index: u32, train: u64) -> Self {
        debug_assert!(train < (1 << 32));
        let id = ((lane as u64) << 56) | ((index as u64 & 0xff_ffff) << 32) | (train & 0xffff_ffff);
        Self::new(seed, id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Quadrature amplitudes of every mode plus the per-train detector offset.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureState {
    /// `(X_i, Y_i)` per mode, x_zpf units.
    pub quadratures: Vec<(f64, f64)>,
    /// Offset in normalized homodyne (H') units, constant within a train.
    pub v_off: f64,
    /// Time of the last update (s).
    pub epoch: f64,
}

impl QuadratureState {
    pub fn zero(n_modes: usize) -> Self {
        QuadratureState {
            quadratures: vec![(0.0, 0.0); n_modes],
            v_off: 0.0,
            epoch: 0.0,
        }
    }
}

/// Draw a fresh thermal state: each quadrature is `N(0, 2 n_th)`, the offset
/// is `N(0, offset_sd^2)`.
pub fn sample_thermal_state(
    modes: &[MechMode],
    offset_sd: f64,
    rng: &mut RngStream,
) -> Result<QuadratureState> {
    if modes.is_empty() {
        return Err(Error::invalid("at least one mechanical mode is required"));
    }
    if !(offset_sd >= 0.0) {
        return Err(Error::invalid(format!("offset_sd must be non-negative, got {offset_sd}")));
    }
    let mut quadratures = Vec::with_capacity(modes.len());
    for mode in modes {
        mode.validate()?;
        let sd = mode.quadrature_variance().sqrt();
        let x = sd * rng.normal();
        let y = sd * rng.normal();
        quadratures.push((x, y));
    }
    let v_off = offset_sd * rng.normal();
    Ok(QuadratureState {
        quadratures,
        v_off,
        epoch: 0.0,
    })
}

/// Total displacement `sum_i X_i cos(theta_i) + Y_i sin(theta_i)` for the
/// given per-mode phases.
pub fn displacement(state: &QuadratureState, thetas: &[f64]) -> f64 {
    assert_eq!(
        state.quadratures.len(),
        thetas.len(),
        "one phase per mode is required"
    );
    state
        .quadratures
        .iter()
        .zip(thetas)
        .map(|(&(x, y), &th)| {
            let (s, c) = th.sin_cos();
            x * c + y * s
        })
        .sum()
}

/// Displacement at physical time `t`, each mode accruing phase `omega_i t`.
pub fn displacement_at(state: &QuadratureState, modes: &[MechMode], t: f64) -> f64 {
    let phases: Vec<f64> = modes.iter().map(|m| m.omega * t).collect();
    displacement(state, &phases)
}

/// Exact Ornstein-Uhlenbeck step of length `dt` applied to every quadrature.
pub fn evolve_dephase(
    state: &QuadratureState,
    modes: &[MechMode],
    dt: f64,
    rng: &mut RngStream,
) -> Result<QuadratureState> {
    if !(dt >= 0.0) {
        return Err(Error::invalid(format!("dt must be non-negative, got {dt}")));
    }
    if modes.len() != state.quadratures.len() {
        return Err(Error::invalid("state and mode list disagree on the number of modes"));
    }
    let mut next = state.clone();
    next.epoch = state.epoch + dt;
    if dt == 0.0 {
        return Ok(next);
    }
    for (q, mode) in next.quadratures.iter_mut().zip(modes) {
        let gamma = mode.dephasing_rate();
        if gamma == 0.0 {
            continue;
        }
        let decay = (-gamma * dt).exp();
        let kick = (mode.quadrature_variance() * (-(-2.0 * gamma * dt).exp_m1())).sqrt();
        q.0 = decay * q.0 + kick * rng.normal();
        q.1 = decay * q.1 + kick * rng.normal();
    }
    Ok(next)
}
