//! Analytic distribution of the normalized homodyne signal for a thermal
//! (Gaussian) displacement pushed through `H' = D / (D^2 + 1)`, `D = beta x_n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{norm_cdf, norm_pdf, norm_sf};

/// Both roots of `H' = D / (D^2 + 1)`: the linear branch (`|D| <= 1`) and the
/// saturated branch (`|D| >= 1`). At `H' = 0` the saturated root is infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branches {
    pub lower: f64,
    pub upper: f64,
}

pub fn invert_transduction(h_prime: f64) -> Result<Branches> {
    if !(h_prime.abs() <= 0.5) {
        return Err(Error::NoRealSolution(h_prime));
    }
    if h_prime == 0.0 {
        return Ok(Branches {
            lower: 0.0,
            upper: f64::INFINITY,
        });
    }
    let s = (1.0 - 4.0 * h_prime * h_prime).max(0.0).sqrt();
    // Rationalized form of (1 - s) / (2h) avoids cancellation near h = 0.
    Ok(Branches {
        lower: 2.0 * h_prime / (1.0 + s),
        upper: (1.0 + s) / (2.0 * h_prime),
    })
}

/// `|dD/dH'|` on each branch, `(1 / 2H'^2) |1 -/+ 1/sqrt(1 - 4H'^2)|`, written
/// in cancellation-free form. Valid for `0 < |H'| < 0.5`.
pub fn branch_jacobians(h_prime: f64) -> (f64, f64) {
    let h2 = h_prime * h_prime;
    let s = (1.0 - 4.0 * h2).sqrt();
    let lower = 2.0 / (s * (1.0 + s));
    let upper = (1.0 + s) / (2.0 * h2 * s);
    (lower, upper)
}

/// Probability density of H' for a zero-mean Gaussian `D` with SD
/// `sigma_delta`, summed over both branches. Zero outside `|H'| < 0.5` and
/// infinite exactly at the integrable divergences `H' = +/-0.5`.
pub fn thermal_pdf(h_prime: f64, sigma_delta: f64) -> f64 {
    let a = h_prime.abs();
    if a > 0.5 {
        return 0.0;
    }
    if a == 0.5 {
        return f64::INFINITY;
    }
    if a == 0.0 {
        return norm_pdf(0.0) / sigma_delta;
    }
    let br = invert_transduction(a).expect("range checked");
    let (jl, ju) = branch_jacobians(a);
    (norm_pdf(br.lower / sigma_delta) * jl + norm_pdf(br.upper / sigma_delta) * ju) / sigma_delta
}

/// Cumulative distribution of H'. Closed form: for `0 <= y < 0.5`,
/// `H' <= y` iff `D < 0`, `0 <= D <= D_lower(y)` or `D >= D_upper(y)`.
pub fn thermal_cdf(h_prime: f64, sigma_delta: f64) -> f64 {
    if h_prime >= 0.5 {
        return 1.0;
    }
    if h_prime <= -0.5 {
        return 0.0;
    }
    if h_prime < 0.0 {
        return 1.0 - thermal_cdf(-h_prime, sigma_delta);
    }
    let br = invert_transduction(h_prime).expect("range checked");
    let upper_tail = if br.upper.is_finite() {
        norm_sf(br.upper / sigma_delta)
    } else {
        0.0
    };
    norm_cdf(br.lower / sigma_delta) + upper_tail
}

/// Thermal histogram model: `sigma_delta` is the SD of `beta x_n`, `scale_a`
/// converts H' to detector units, `noise_sd` is the Gaussian smoothing width
/// in H' units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramModel {
    pub sigma_delta: f64,
    pub scale_a: f64,
    pub noise_sd: f64,
}

impl HistogramModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_delta > 0.0) {
            return Err(Error::invalid("sigma_delta must be positive"));
        }
        if !(self.scale_a > 0.0) {
            return Err(Error::invalid("scale_a must be positive"));
        }
        if !(self.noise_sd > 0.0) {
            return Err(Error::invalid("noise_sd must be positive"));
        }
        Ok(())
    }
}

/// Uniform sampling grid `start + k * step`, `k < len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl UniformGrid {
    /// Symmetric grid over `[-half_width, half_width]` with at most `step`
    /// spacing.
    pub fn symmetric(half_width: f64, step: f64) -> Self {
        let n = (2.0 * half_width / step).ceil() as usize;
        let step = 2.0 * half_width / n as f64;
        UniformGrid {
            start: -half_width,
            step,
            len: n + 1,
        }
    }

    /// Default grid for a model: covers `+/-(0.5 + 8 noise_sd)` with spacing
    /// `noise_sd / 6` (capped at 2.5e-3).
    pub fn for_model(model: &HistogramModel) -> Self {
        let step = (model.noise_sd / 6.0).min(2.5e-3);
        Self::symmetric(0.5 + 8.0 * model.noise_sd, step)
    }

    pub fn point(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.point(self.len - 1)
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|k| self.point(k))
    }
}

/// Noise-smoothed density tabulated on a grid, with its running integral.
#[derive(Debug, Clone)]
pub struct SmoothedPdf {
    pub grid: UniformGrid,
    pub density: Vec<f64>,
    cumulative: Vec<f64>,
}

impl SmoothedPdf {
    fn new(grid: UniformGrid, density: Vec<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(density.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in density.windows(2) {
            acc += 0.5 * (w[0] + w[1]) * grid.step;
            cumulative.push(acc);
        }
        SmoothedPdf {
            grid,
            density,
            cumulative,
        }
    }

    pub fn total_mass(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    /// Linear interpolation of the tabulated density; zero off-grid.
    pub fn density_at(&self, y: f64) -> f64 {
        let u = (y - self.grid.start) / self.grid.step;
        if u < 0.0 || u > (self.grid.len - 1) as f64 {
            return 0.0;
        }
        let k = (u.floor() as usize).min(self.grid.len - 2);
        let f = u - k as f64;
        self.density[k] * (1.0 - f) + self.density[k + 1] * f
    }

    fn cumulative_at(&self, y: f64) -> f64 {
        let u = (y - self.grid.start) / self.grid.step;
        if u <= 0.0 {
            return 0.0;
        }
        if u >= (self.grid.len - 1) as f64 {
            return self.total_mass();
        }
        let k = u.floor() as usize;
        let f = u - k as f64;
        let d0 = self.density[k];
        let d1 = self.density[k + 1];
        // Exact integral of the linear interpolant over the partial cell.
        self.cumulative[k] + self.grid.step * (d0 * f + 0.5 * (d1 - d0) * f * f)
    }

    /// Probability mass in `[a, b]`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        self.cumulative_at(b) - self.cumulative_at(a)
    }

    /// Grid locations of strict local maxima, sorted by position.
    pub fn local_maxima(&self) -> Vec<f64> {
        let d = &self.density;
        (1..d.len() - 1)
            .filter(|&k| d[k] > d[k - 1] && d[k] >= d[k + 1])
            .map(|k| self.grid.point(k))
            .collect()
    }
}

/// Convolve the thermal density with a Gaussian of SD `model.noise_sd` on the
/// given grid (H' units). The thermal mass in each grid cell comes from the
/// closed-form CDF, so the `1/sqrt` divergences at +/-0.5 never get sampled.
pub fn convolve_noise(model: &HistogramModel, grid: &UniformGrid) -> Result<SmoothedPdf> {
    model.validate()?;
    let need = 0.5 + 5.0 * model.noise_sd;
    if grid.len < 3 || grid.start > -need || grid.end() < need {
        return Err(Error::Coverage(format!(
            "grid [{:.4}, {:.4}] must cover +/-{need:.4}",
            grid.start,
            grid.end()
        )));
    }
    let dy = grid.step;
    let s = model.noise_sd;

    // Thermal mass per cell [y - dy/2, y + dy/2], treated as uniform within
    // the cell.
    let edges: Vec<f64> = (0..=grid.len)
        .map(|k| thermal_cdf(grid.start + (k as f64 - 0.5) * dy, model.sigma_delta))
        .collect();
    let masses: Vec<f64> = edges.windows(2).map(|w| w[1] - w[0]).collect();

    let reach = ((10.0 * s) / dy).ceil() as usize + 1;
    let mut density = vec![0.0; grid.len];
    for (j, &m) in masses.iter().enumerate() {
        if m <= 0.0 {
            continue;
        }
        let a = grid.point(j) - 0.5 * dy;
        let b = a + dy;
        let lo = j.saturating_sub(reach);
        let hi = (j + reach).min(grid.len - 1);
        for (k, slot) in density.iter_mut().enumerate().take(hi + 1).skip(lo) {
            let y = grid.point(k);
            *slot += m / dy * (norm_cdf((y - a) / s) - norm_cdf((y - b) / s));
        }
    }
    Ok(SmoothedPdf::new(*grid, density))
}

/// Relative error of the thermal variance extracted from half-period pulse
/// differences when a second mode at frequency ratio `r` is present:
/// `(6 - 2 cos(r pi)) / 8 - 1` for equal mode variances.
pub fn half_period_variance_error(r: f64) -> f64 {
    (6.0 - 2.0 * (r * std::f64::consts::PI).cos()) / 8.0 - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inversion_examples() {
        let b = invert_transduction(0.3).unwrap();
        assert!((b.lower - 1.0 / 3.0).abs() < 1e-12);
        assert!((b.upper - 3.0).abs() < 1e-12);
        let b = invert_transduction(0.5).unwrap();
        assert_eq!((b.lower, b.upper), (1.0, 1.0));
        assert!(matches!(invert_transduction(0.51), Err(Error::NoRealSolution(_))));
        let z = invert_transduction(0.0).unwrap();
        assert_eq!(z.lower, 0.0);
        assert!(z.upper.is_infinite());
        let n = invert_transduction(-0.3).unwrap();
        assert!((n.lower + 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn branches_satisfy_transduction() {
        for i in 1..500 {
            let h = i as f64 / 1000.0;
            for sign in [-1.0, 1.0] {
                let b = invert_transduction(sign * h).unwrap();
                for d in [b.lower, b.upper] {
                    assert!((d / (d * d + 1.0) - sign * h).abs() < 1e-12, "h = {h}");
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for i in 1..=49 {
            let h = i as f64 / 100.0;
            let (jl, ju) = branch_jacobians(h);
            let step = 1e-7;
            let p = invert_transduction(h + step).unwrap();
            let m = invert_transduction(h - step).unwrap();
            let fd_l = ((p.lower - m.lower) / (2.0 * step)).abs();
            let fd_u = ((p.upper - m.upper) / (2.0 * step)).abs();
            assert!((jl / fd_l - 1.0).abs() < 1e-6, "h = {h}: {jl} vs {fd_l}");
            assert!((ju / fd_u - 1.0).abs() < 1e-6, "h = {h}: {ju} vs {fd_u}");
        }
    }

    #[test]
    fn pdf_is_symmetric_and_bounded_in_support() {
        for i in 0..100 {
            let h = i as f64 / 200.0;
            assert_eq!(thermal_pdf(h, 0.71), thermal_pdf(-h, 0.71));
        }
        assert_eq!(thermal_pdf(0.6, 0.71), 0.0);
        assert!(thermal_pdf(0.5, 0.71).is_infinite());
    }

    #[test]
    fn pdf_is_continuous_through_zero() {
        let at0 = thermal_pdf(0.0, 0.71);
        assert!((thermal_pdf(1e-9, 0.71) - at0).abs() / at0 < 1e-9);
    }

    #[test]
    fn cdf_differentiates_to_pdf() {
        for &h in &[-0.45, -0.2, 0.0, 0.1, 0.31, 0.49] {
            let e = 1e-6;
            let fd = (thermal_cdf(h + e, 0.71) - thermal_cdf(h - e, 0.71)) / (2.0 * e);
            let p = thermal_pdf(h, 0.71);
            assert!((fd / p - 1.0).abs() < 1e-5, "h = {h}");
        }
        assert_eq!(thermal_cdf(0.0, 0.71), 0.5);
        assert_eq!(thermal_cdf(0.5, 0.71), 1.0);
    }

    #[test]
    fn convolution_needs_coverage() {
        let m = HistogramModel {
            sigma_delta: 0.71,
            scale_a: 1.0,
            noise_sd: 0.02,
        };
        let narrow = UniformGrid::symmetric(0.55, 1e-3);
        assert!(matches!(convolve_noise(&m, &narrow), Err(Error::Coverage(_))));
        let bad = HistogramModel { noise_sd: 0.0, ..m };
        assert!(convolve_noise(&bad, &UniformGrid::symmetric(1.0, 1e-3)).is_err());
    }

    #[test]
    fn convolution_is_normalized_and_finite_at_edges() {
        for s in [0.005, 0.0163, 0.05] {
            let m = HistogramModel {
                sigma_delta: 0.71,
                scale_a: 1.0,
                noise_sd: s,
            };
            let pdf = convolve_noise(&m, &UniformGrid::for_model(&m)).unwrap();
            assert!((pdf.total_mass() - 1.0).abs() < 1e-4, "s = {s}: {}", pdf.total_mass());
            assert!(pdf.density_at(0.5).is_finite());
            assert!(pdf.density_at(-0.5).is_finite());
        }
    }

    #[test]
    fn tail_mass_grows_with_noise() {
        let mut last = 0.0;
        for s in [0.005, 0.01, 0.02, 0.04, 0.08] {
            let m = HistogramModel {
                sigma_delta: 0.71,
                scale_a: 1.0,
                noise_sd: s,
            };
            let pdf = convolve_noise(&m, &UniformGrid::for_model(&m)).unwrap();
            let outside = pdf.total_mass() - pdf.mass_between(-0.5, 0.5);
            assert!(outside > last, "s = {s}");
            last = outside;
        }
    }

    #[test]
    fn small_noise_recovers_pdf_away_from_edges() {
        let m = HistogramModel {
            sigma_delta: 0.71,
            scale_a: 1.0,
            noise_sd: 1e-3,
        };
        let grid = UniformGrid::symmetric(0.51, 2e-4);
        let pdf = convolve_noise(&m, &grid).unwrap();
        for &h in &[0.0, 0.1, -0.25, 0.4] {
            let exact = thermal_pdf(h, 0.71);
            assert!((pdf.density_at(h) / exact - 1.0).abs() < 1e-3, "h = {h}");
        }
    }

    #[test]
    fn half_period_error_is_small_for_nearby_modes() {
        for r in [3.2280 / 3.1081, 3.218 / 3.340, 2.976 / 3.090] {
            assert!(half_period_variance_error(r).abs() < 0.005, "r = {r}");
        }
        assert_eq!(half_period_variance_error(1.0), 0.0);
    }
}
