//! Physical parameters and the derived scalars used by every other module.
//!
//! Displacements are carried in units of the zero-point amplitude `x_zpf`
//! throughout, so the physical `x_zpf` never enters a computation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boltzmann constant (J/K), CODATA 2018 (exact).
pub const K_B: f64 = 1.380649e-23;
/// Reduced Planck constant (J s), CODATA 2018.
pub const HBAR: f64 = 1.054571817e-34;

/// Thermal phonon number `k_B T / (hbar omega)`.
pub fn thermal_occupation(temperature: f64, omega: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::invalid(format!("omega must be positive, got {omega}")));
    }
    if !(temperature >= 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be non-negative, got {temperature}"
        )));
    }
    Ok(K_B * temperature / (HBAR * omega))
}

/// Temperature of a single-mode thermal state whose displacement SD is
/// `width` (x_zpf units): `T = width^2 hbar omega / (2 k_B)`.
pub fn effective_temperature(width: f64, omega: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::invalid(format!("omega must be positive, got {omega}")));
    }
    Ok(width * width * HBAR * omega / (2.0 * K_B))
}

/// One mechanical mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechMode {
    /// Angular frequency (rad/s).
    pub omega: f64,
    /// Energy decay rate Gamma (rad/s). Quadratures dephase at Gamma/2.
    pub gamma_decay: f64,
    /// Mean thermal phonon number.
    pub n_th: f64,
    /// Zero-point amplitude relative to the reference mode.
    pub x_zpf_rel: f64,
}

impl MechMode {
    pub fn new(omega: f64, gamma_decay: f64, n_th: f64) -> Result<Self> {
        let mode = MechMode {
            omega,
            gamma_decay,
            n_th,
            x_zpf_rel: 1.0,
        };
        mode.validate()?;
        Ok(mode)
    }

    pub fn from_temperature(omega: f64, gamma_decay: f64, temperature: f64) -> Result<Self> {
        let n_th = thermal_occupation(temperature, omega)?;
        Self::new(omega, gamma_decay, n_th)
    }

    /// Convenience constructor taking `omega/2pi` in Hz and `Gamma/2pi` in Hz.
    pub fn from_hz(freq_hz: f64, gamma_hz: f64, temperature: f64) -> Result<Self> {
        Self::from_temperature(2.0 * PI * freq_hz, 2.0 * PI * gamma_hz, temperature)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) {
            return Err(Error::invalid(format!("mode omega must be positive, got {}", self.omega)));
        }
        if !(self.gamma_decay >= 0.0) {
            return Err(Error::invalid(format!(
                "mode gamma_decay must be non-negative, got {}",
                self.gamma_decay
            )));
        }
        if !(self.n_th >= 0.0) {
            return Err(Error::invalid(format!("mode n_th must be non-negative, got {}", self.n_th)));
        }
        if !(self.x_zpf_rel > 0.0) {
            return Err(Error::invalid("mode x_zpf_rel must be positive"));
        }
        Ok(())
    }

    /// Quadrature-amplitude dephasing rate `gamma = Gamma / 2`.
    pub fn dephasing_rate(&self) -> f64 {
        0.5 * self.gamma_decay
    }

    /// Thermal variance of each quadrature amplitude, `2 n_th` (x_zpf^2 units).
    pub fn quadrature_variance(&self) -> f64 {
        2.0 * self.n_th * self.x_zpf_rel * self.x_zpf_rel
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }
}

/// Optical cavity, coupling efficiencies and homodyne settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavitySetup {
    /// Photon-phonon coupling rate (rad/s).
    pub g0: f64,
    /// Total cavity linewidth (rad/s).
    pub kappa: f64,
    pub kappa_in: f64,
    pub kappa_out: f64,
    pub eta_in: f64,
    pub eta_out: f64,
    /// Static laser detuning (rad/s).
    pub detuning0: f64,
    /// Homodyne phase (rad); pi/2 is the phase-sensitive point.
    pub phi: f64,
}

impl CavitySetup {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::invalid(format!("kappa must be positive, got {}", self.kappa)));
        }
        for (name, eta) in [("eta_in", self.eta_in), ("eta_out", self.eta_out)] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {eta}")));
            }
        }
        Ok(())
    }

    pub fn beta(&self) -> Result<f64> {
        derive_beta(self)
    }
}

/// Pulse photon numbers and timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSetup {
    pub n_photons: f64,
    pub n_lo: f64,
    /// Pulse duration (s).
    pub tau_pulse: f64,
    /// Reset wait between pulse trains (s).
    pub train_gap: f64,
}

impl PulseSetup {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_photons > 0.0) {
            return Err(Error::invalid(format!("n_photons must be positive, got {}", self.n_photons)));
        }
        if !(self.n_lo > 0.0) {
            return Err(Error::invalid(format!("n_lo must be positive, got {}", self.n_lo)));
        }
        if !(self.tau_pulse >= 0.0) || !(self.train_gap >= 0.0) {
            return Err(Error::invalid("pulse durations must be non-negative"));
        }
        Ok(())
    }

    /// Modes for which the pulse is too long for the snapshot assumption
    /// (`tau_pulse > 0.05` periods).
    pub fn snapshot_violations<'a>(&self, modes: &'a [MechMode]) -> Vec<&'a MechMode> {
        modes
            .iter()
            .filter(|m| self.tau_pulse > 0.05 * m.period())
            .collect()
    }
}

/// Relative cavity shift per x_zpf, `beta = 2 g0 / kappa`.
pub fn derive_beta(cavity: &CavitySetup) -> Result<f64> {
    if !(cavity.kappa > 0.0) {
        return Err(Error::invalid(format!("kappa must be positive, got {}", cavity.kappa)));
    }
    Ok(2.0 * cavity.g0 / cavity.kappa)
}

/// Pulsed measurement strength `chi = 8 sqrt(eta_in eta_out N_P) g0 / kappa`.
pub fn derive_chi(cavity: &CavitySetup, pulse: &PulseSetup) -> Result<f64> {
    cavity.validate()?;
    if !(pulse.n_photons > 0.0) {
        return Err(Error::invalid(format!("n_photons must be positive, got {}", pulse.n_photons)));
    }
    Ok(8.0 * (cavity.eta_in * cavity.eta_out * pulse.n_photons).sqrt() * cavity.g0 / cavity.kappa)
}

/// Single-pulse displacement imprecision `x_zpf / chi`.
pub fn sigma_m(chi: f64) -> f64 {
    1.0 / chi
}

/// Combined thermal displacement SD of several independent modes,
/// `sqrt(sum_i 2 n_th,i)` in x_zpf units.
pub fn thermal_width(modes: &[MechMode]) -> Result<f64> {
    if modes.is_empty() {
        return Err(Error::invalid("thermal_width needs at least one mode"));
    }
    Ok(modes.iter().map(MechMode::quadrature_variance).sum::<f64>().sqrt())
}

/// Cavity, pulse and mode values of the sliced-nanobeam device used for the
/// conditional-state tomography dataset.
pub mod presets {
    use super::*;

    pub const TEMPERATURE_K: f64 = 3.2;
    pub const G0_HZ: f64 = 25.0e6;
    pub const KAPPA_HZ: f64 = 20.4e9;
    pub const ETA_IN: f64 = 0.013;
    pub const ETA_OUT_OVER_IN: f64 = 0.35;
    pub const N_PHOTONS: f64 = 2.0e6;

    pub fn cavity() -> CavitySetup {
        let kappa = 2.0 * PI * KAPPA_HZ;
        CavitySetup {
            g0: 2.0 * PI * G0_HZ,
            kappa,
            kappa_in: 0.5 * kappa,
            kappa_out: 0.5 * kappa,
            eta_in: ETA_IN,
            eta_out: ETA_OUT_OVER_IN * ETA_IN,
            detuning0: 0.0,
            phi: 0.5 * PI,
        }
    }

    pub fn pulse() -> PulseSetup {
        PulseSetup {
            n_photons: N_PHOTONS,
            n_lo: 1.0e8,
            tau_pulse: 20e-9,
            train_gap: 30e-3,
        }
    }

    /// The two flexural modes of the tomography dataset (3.1081 and 3.2280 MHz).
    pub fn tomography_modes(gamma_hz: f64) -> Vec<MechMode> {
        [3.1081e6, 3.2280e6]
            .iter()
            .map(|&f| MechMode::from_hz(f, gamma_hz, TEMPERATURE_K).expect("valid preset"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cavity(g0_hz: f64, kappa_hz: f64) -> CavitySetup {
        CavitySetup {
            g0: 2.0 * PI * g0_hz,
            kappa: 2.0 * PI * kappa_hz,
            ..presets::cavity()
        }
    }

    #[test]
    fn beta_examples() {
        let b = derive_beta(&presets::cavity()).unwrap();
        assert_relative_eq!(b, 2.451e-3, max_relative = 2e-4);
        assert_eq!(derive_beta(&cavity(0.0, 20.4e9)).unwrap(), 0.0);
        assert_relative_eq!(derive_beta(&cavity(10.2e9, 20.4e9)).unwrap(), 1.0, epsilon = 1e-15);
        assert!(derive_beta(&CavitySetup { kappa: 0.0, ..presets::cavity() }).is_err());
    }

    #[test]
    fn chi_examples() {
        let chi = derive_chi(&presets::cavity(), &presets::pulse()).unwrap();
        assert_relative_eq!(chi, 0.1066, max_relative = 1e-3);
        assert_relative_eq!(sigma_m(chi), 9.378, max_relative = 1e-3);

        let unit = CavitySetup {
            g0: 1.0,
            kappa: 8.0,
            eta_in: 1.0,
            eta_out: 1.0,
            ..presets::cavity()
        };
        let one_photon = PulseSetup { n_photons: 1.0, ..presets::pulse() };
        assert_relative_eq!(derive_chi(&unit, &one_photon).unwrap(), 1.0, epsilon = 1e-15);

        let tiny = PulseSetup { n_photons: 1e-300, ..presets::pulse() };
        assert!(derive_chi(&presets::cavity(), &tiny).unwrap() < 1e-150);
        let zero = PulseSetup { n_photons: 0.0, ..presets::pulse() };
        assert!(matches!(derive_chi(&presets::cavity(), &zero), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn occupation_examples() {
        let w = 2.0 * PI * 3.1081e6;
        assert_relative_eq!(thermal_occupation(3.2, w).unwrap(), 2.145e4, max_relative = 5e-4);
        assert_eq!(thermal_occupation(0.0, w).unwrap(), 0.0);
        assert_relative_eq!(thermal_occupation(0.38, w).unwrap(), 2.547e3, max_relative = 5e-4);
        assert!(thermal_occupation(1.0, 0.0).is_err());
        assert!(thermal_occupation(1.0, -3.0).is_err());
    }

    #[test]
    fn occupation_scaling() {
        let base = thermal_occupation(1.7, 1.0e7).unwrap();
        assert_relative_eq!(thermal_occupation(3.4, 1.0e7).unwrap(), 2.0 * base, max_relative = 1e-12);
        assert_relative_eq!(thermal_occupation(1.7, 3.0e7).unwrap(), base / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn effective_temperature_inverts_occupation() {
        let w = 2.0 * PI * 3.1081e6;
        let n = thermal_occupation(0.38, w).unwrap();
        let width = (2.0 * n).sqrt();
        assert_relative_eq!(effective_temperature(width, w).unwrap(), 0.38, max_relative = 1e-12);
    }

    #[test]
    fn thermal_width_examples() {
        let modes = presets::tomography_modes(0.0);
        let w = thermal_width(&modes).unwrap();
        assert!((w - 290.2).abs() < 0.1, "{w}");
        assert_eq!(thermal_width(&[MechMode::new(1.0, 0.0, 0.0).unwrap()]).unwrap(), 0.0);
        assert_relative_eq!(
            thermal_width(&[MechMode::new(1.0, 0.0, 0.5).unwrap()]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert!(thermal_width(&[]).is_err());

        let m = MechMode::new(5.0, 0.0, 123.0).unwrap();
        let single = thermal_width(&[m]).unwrap();
        assert_relative_eq!(thermal_width(&[m; 4]).unwrap(), 2.0 * single, max_relative = 1e-14);
    }

    #[test]
    fn beta_and_chi_are_linear_in_g0() {
        let c = presets::cavity();
        let c2 = CavitySetup { g0: 2.0 * c.g0, ..c };
        let p = presets::pulse();
        assert_relative_eq!(derive_beta(&c2).unwrap(), 2.0 * derive_beta(&c).unwrap(), max_relative = 1e-14);
        assert_relative_eq!(
            derive_chi(&c2, &p).unwrap(),
            2.0 * derive_chi(&c, &p).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn snapshot_check_flags_long_pulses() {
        let modes = presets::tomography_modes(0.0);
        // 20 ns is ~6% of a 3.1 MHz period, just past the warning threshold.
        assert_eq!(presets::pulse().snapshot_violations(&modes).len(), 2);
        let short = PulseSetup { tau_pulse: 10e-9, ..presets::pulse() };
        assert!(short.snapshot_violations(&modes).is_empty());
    }
}
