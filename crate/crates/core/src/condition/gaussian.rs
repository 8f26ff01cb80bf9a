//! First and second moments of a single mode under a pulsed position
//! measurement: precision-weighted update of the measured quadrature,
//! backaction noise on the conjugate one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean `(X, Y)` and covariance of one mode (x_zpf units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl GaussianState {
    pub fn thermal(n_th: f64) -> Self {
        let v = 2.0 * n_th;
        GaussianState {
            mean: [0.0, 0.0],
            cov: [[v, 0.0], [0.0, v]],
        }
    }

    /// Minimum-uncertainty state with unit variance per quadrature.
    pub fn pure() -> Self {
        GaussianState {
            mean: [0.0, 0.0],
            cov: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        let [[a, b], [c, d]] = self.cov;
        (b - c).abs() <= tol * (1.0 + b.abs())
            && a >= -tol
            && d >= -tol
            && a * d - b * c >= -tol * (1.0 + a.abs() * d.abs())
    }
}

/// Measurement of the X quadrature with outcome `measured_x`, strength `chi`
/// and efficiency ratio `eta_ratio = eta_in / eta_out`. `omega_kick` adds a
/// deterministic `omega sqrt(2)` to the conjugate mean.
pub fn gaussian_update(
    state: &GaussianState,
    measured_x: f64,
    chi: f64,
    eta_ratio: f64,
    omega_kick: f64,
) -> Result<GaussianState> {
    if !(chi > 0.0) {
        return Err(Error::invalid(format!("chi must be positive, got {chi}")));
    }
    if !(eta_ratio >= 0.0) {
        return Err(Error::invalid(format!("eta ratio must be non-negative, got {eta_ratio}")));
    }
    if !state.is_psd(1e-9) {
        return Err(Error::invalid("prior covariance is not positive semi-definite"));
    }
    let r = 1.0 / (chi * chi);
    let p = state.cov;
    let s = p[0][0] + r;
    let k = [p[0][0] / s, p[1][0] / s];
    let innovation = measured_x - state.mean[0];
    let mean = [
        state.mean[0] + k[0] * innovation,
        state.mean[1] + k[1] * innovation + omega_kick * std::f64::consts::SQRT_2,
    ];
    let mut cov = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            cov[i][j] = p[i][j] - k[i] * p[0][j];
        }
    }
    let off = 0.5 * (cov[0][1] + cov[1][0]);
    cov[0][1] = off;
    cov[1][0] = off;
    cov[1][1] += eta_ratio * chi * chi;
    Ok(GaussianState { mean, cov })
}

/// `(sigma_m, sigma_ba)` of a single pulse.
pub fn imprecision_backaction(chi: f64, eta_ratio: f64) -> (f64, f64) {
    (1.0 / chi, eta_ratio.sqrt() * chi)
}

/// `sqrt(sigma_m (sigma_m + sigma_ba))` in x_zpf.
pub fn uncertainty_product(chi: f64, eta_ratio: f64) -> f64 {
    let (m, ba) = imprecision_backaction(chi, eta_ratio);
    (m * (m + ba)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weak_measurement_is_identity() {
        let s = GaussianState {
            mean: [1.0, -2.0],
            cov: [[3.0, 0.5], [0.5, 2.0]],
        };
        let u = gaussian_update(&s, 100.0, 1e-9, 0.5, 0.0).unwrap();
        for i in 0..2 {
            assert_relative_eq!(u.mean[i], s.mean[i], epsilon = 1e-12);
            for j in 0..2 {
                assert_relative_eq!(u.cov[i][j], s.cov[i][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn thermal_prior_collapses_to_imprecision() {
        let s = GaussianState::thermal(2.145e4);
        let u = gaussian_update(&s, 12.0, 0.1066, 1.0 / 0.35, 0.0).unwrap();
        assert_relative_eq!(u.cov[0][0].sqrt(), 9.38, epsilon = 0.01);
        let v = 2.0 * 2.145e4;
        assert_relative_eq!(u.mean[0], 12.0 * v / (v + 1.0 / 0.1066f64.powi(2)), epsilon = 1e-9);
        assert_relative_eq!(u.cov[1][1], 2.0 * 2.145e4 + 0.1066f64.powi(2) / 0.35, epsilon = 1e-9);
    }

    #[test]
    fn kick_moves_conjugate_mean() {
        let u = gaussian_update(&GaussianState::pure(), 0.0, 0.5, 1.0, 2.0).unwrap();
        assert_relative_eq!(u.mean[1], 2.0 * std::f64::consts::SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(gaussian_update(&GaussianState::pure(), 0.0, 0.0, 1.0, 0.0).is_err());
        let bad = GaussianState {
            mean: [0.0; 2],
            cov: [[1.0, 2.0], [2.0, 1.0]],
        };
        assert!(gaussian_update(&bad, 0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn preset_uncertainty_product() {
        assert!(uncertainty_product(0.1066, 1.0 / 0.35) > 9.0);
    }
}
