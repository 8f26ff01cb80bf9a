//! Displacement to homodyne signal: the cavity's nonlinear transduction plus
//! additive shot noise on the integrated pulse.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechsim::RngStream;
use crate::params::CavitySetup;

/// One integrated, noise-corrupted, normalized homodyne sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub train_id: u64,
    pub pulse_index: u32,
    /// Pulse center time (s), zero at the last preparation pulse.
    pub t: f64,
    /// Nominal mode-1 phase `omega_1 t` (rad).
    pub theta: f64,
    /// Normalized signal H'.
    pub h_norm: f64,
}

/// Normalized homodyne response for arbitrary detuning and homodyne phase:
/// `[cos(phi) + u sin(phi)] / (1 + u^2)` with `u = 2 (Delta_0 + g0 x_n) / kappa`.
/// The amplitude prefactor is carried separately as the calibration scale.
pub fn homodyne_full(x_n: f64, cavity: &CavitySetup) -> f64 {
    let u = 2.0 * (cavity.detuning0 + cavity.g0 * x_n) / cavity.kappa;
    let (s, c) = cavity.phi.sin_cos();
    (c + u * s) / (1.0 + u * u)
}

/// On-resonance, phase-sensitive response `beta x / (beta^2 x^2 + 1)`.
pub fn homodyne_eq1(x_n: f64, beta: f64) -> f64 {
    let d = beta * x_n;
    d / (d * d + 1.0)
}

/// Shot-noise SD in H' units such that the linear-regime displacement
/// imprecision is exactly `x_zpf / chi`.
pub fn shot_noise_sd(beta: f64, chi: f64) -> Result<f64> {
    if !(chi > 0.0) {
        return Err(Error::invalid(format!("chi must be positive, got {chi}")));
    }
    Ok(beta / chi)
}

/// How the simulator maps displacement to noiseless H'.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transducer {
    /// Resonant, phase-sensitive response.
    Resonant { beta: f64 },
    /// General detuning and homodyne phase.
    Full { cavity: CavitySetup },
    /// Small-displacement linearization `beta x`.
    Linear { beta: f64 },
    /// Laser tuned away from the cavity: no displacement signal, shot noise only.
    OffResonance,
}

impl Transducer {
    pub fn response(&self, x_n: f64) -> f64 {
        match self {
            Transducer::Resonant { beta } => homodyne_eq1(x_n, *beta),
            Transducer::Full { cavity } => homodyne_full(x_n, cavity),
            Transducer::Linear { beta } => beta * x_n,
            Transducer::OffResonance => 0.0,
        }
    }
}

/// Snapshot measurement of a frozen displacement: noiseless response plus
/// the train offset plus Gaussian shot noise of SD `noise_sd` (H' units).
pub fn measure_pulse(
    x_n: f64,
    transducer: &Transducer,
    v_off: f64,
    noise_sd: f64,
    rng: &mut RngStream,
) -> f64 {
    let noise = if noise_sd > 0.0 { noise_sd * rng.normal() } else { 0.0 };
    transducer.response(x_n) + v_off + noise
}

/// Stream pulse records as CSV with columns
/// `train_id,pulse_index,t,theta,h_norm`.
pub fn write_pulses_csv<'a, I>(path: &Path, records: I) -> Result<()>
where
    I: IntoIterator<Item = &'a PulseRecord>,
{
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}
