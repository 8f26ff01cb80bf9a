//! Filtered back-projection and its forward counterpart.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::marginal::{Axis, Projections};
use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LmOptions};

/// Square reconstruction grid `[-half_width, half_width]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub half_width: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconOptions {
    /// Hann apodization of the ramp filter.
    pub hann: bool,
    /// Projections per measured angle after linear interpolation of the
    /// sinogram in angle; 1 disables it.
    pub angular_upsample: usize,
}

impl Default for ReconOptions {
    fn default() -> Self {
        ReconOptions {
            hann: true,
            angular_upsample: 2,
        }
    }
}

/// Density on a square grid; `values[i * n + j]` sits at `(x_i, p_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceDensity {
    pub axis: Axis,
    pub values: Vec<f64>,
    /// Factor applied to the raw back-projection to reach unit integral.
    pub scale: f64,
}

impl PhaseSpaceDensity {
    pub fn n(&self) -> usize {
        self.axis.len
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.axis.len + j]
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.axis.step * self.axis.step
    }

    /// Index and value of the largest grid value.
    pub fn peak(&self) -> (usize, usize, f64) {
        let (k, v) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
        (k / self.axis.len, k % self.axis.len, v)
    }

    /// Mean and covariance of the density, counting only positive values.
    pub fn moments(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        let n = self.axis.len;
        let mut m0 = 0.0;
        let mut m1 = [0.0; 2];
        for i in 0..n {
            for j in 0..n {
                let v = self.at(i, j).max(0.0);
                m0 += v;
                m1[0] += v * self.axis.point(i);
                m1[1] += v * self.axis.point(j);
            }
        }
        let mean = [m1[0] / m0, m1[1] / m0];
        let mut c = [[0.0; 2]; 2];
        for i in 0..n {
            for j in 0..n {
                let v = self.at(i, j).max(0.0);
                let d = [self.axis.point(i) - mean[0], self.axis.point(j) - mean[1]];
                for a in 0..2 {
                    for b in 0..2 {
                        c[a][b] += v * d[a] * d[b];
                    }
                }
            }
        }
        for row in c.iter_mut() {
            for v in row.iter_mut() {
                *v /= m0;
            }
        }
        (mean, c)
    }
}

/// Elliptical Gaussian fitted to a reconstructed density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityGaussian {
    pub amplitude: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl DensityGaussian {
    pub fn sds(&self) -> [f64; 2] {
        [self.cov[0][0].sqrt(), self.cov[1][1].sqrt()]
    }

    /// Principal-axis SDs, smaller first.
    pub fn principal_sds(&self) -> [f64; 2] {
        let [[a, b], [_, d]] = self.cov;
        let m = 0.5 * (a + d);
        let r = (0.25 * (a - d).powi(2) + b * b).sqrt();
        [(m - r).max(0.0).sqrt(), (m + r).sqrt()]
    }
}

impl PhaseSpaceDensity {
    /// Least-squares Gaussian over the grid points above `floor * peak`.
    /// Unlike [`moments`](Self::moments) this ignores the low streaks a
    /// sparse-angle back-projection leaves across the grid.
    pub fn gaussian_fit(&self, floor: f64) -> Result<DensityGaussian> {
        let (pi, pj, peak) = self.peak();
        if !(peak > 0.0) {
            return Err(Error::Statistics("density has no positive maximum".into()));
        }
        let n = self.n();
        let pts: Vec<(f64, f64, f64)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.at(i, j) >= floor * peak)
            .map(|(i, j)| (self.axis.point(i), self.axis.point(j), self.at(i, j)))
            .collect();
        if pts.len() < 6 {
            return Err(Error::Statistics(format!("only {} grid points above the fit floor", pts.len())));
        }
        // Start from the second moments of the half-maximum core; a truncated
        // 2-D Gaussian keeps 0.307 of its variance inside that contour.
        let core: Vec<&(f64, f64, f64)> = pts.iter().filter(|p| p.2 >= 0.5 * peak).collect();
        let w: f64 = core.iter().map(|p| p.2).sum();
        let m = [
            core.iter().map(|p| p.0 * p.2).sum::<f64>() / w,
            core.iter().map(|p| p.1 * p.2).sum::<f64>() / w,
        ];
        let var = |f: &dyn Fn(&(f64, f64, f64)) -> f64| core.iter().map(|p| f(p) * p.2).sum::<f64>() / w / 0.307;
        let vx = var(&|p| (p.0 - m[0]).powi(2)).max(self.axis.step.powi(2));
        let vp = var(&|p| (p.1 - m[1]).powi(2)).max(self.axis.step.powi(2));
        let cxp = var(&|p| (p.0 - m[0]) * (p.1 - m[1]));
        let rho0 = (cxp / (vx * vp).sqrt()).clamp(-0.95, 0.95);
        let p0 = [
            peak.ln(),
            self.axis.point(pi),
            self.axis.point(pj),
            0.5 * vx.ln(),
            0.5 * vp.ln(),
            rho0.atanh(),
        ];
        let unpack = |p: &[f64]| {
            let (sx, sp, rho) = (p[3].exp(), p[4].exp(), p[5].tanh());
            (p[0].exp(), [p[1], p[2]], sx, sp, rho)
        };
        let residuals = |p: &[f64]| -> Vec<f64> {
            let (a, mu, sx, sp, rho) = unpack(p);
            let k = 1.0 / (1.0 - rho * rho);
            pts.iter()
                .map(|&(x, q, v)| {
                    let (u, t) = ((x - mu[0]) / sx, (q - mu[1]) / sp);
                    (a * (-0.5 * k * (u * u - 2.0 * rho * u * t + t * t)).exp() - v) / peak
                })
                .collect()
        };
        let rep = levenberg_marquardt(residuals, &p0, LmOptions::default())?;
        let (amplitude, mean, sx, sp, rho) = unpack(&rep.params);
        Ok(DensityGaussian {
            amplitude,
            mean,
            cov: [[sx * sx, rho * sx * sp], [rho * sx * sp, sp * sp]],
        })
    }
}

/// Reduce an angle to `[0, pi)`; `true` when the marginal axis must flip.
pub fn fold_angle(theta: f64) -> (f64, bool) {
    let t = theta.rem_euclid(2.0 * PI);
    if t >= PI {
        let f = t - PI;
        // Guard against rounding pushing the folded value to pi.
        if f >= PI { (0.0, false) } else { (f, true) }
    } else {
        (t, false)
    }
}

/// Angular coverage: spread of the raw angles plus one typical spacing, so a
/// uniform set of K angles over `[0, pi)` covers exactly pi.
pub fn angular_coverage(angles: &[f64]) -> f64 {
    let mut a = angles.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    a.dedup_by(|x, y| (*x - *y).abs() < 1e-9);
    if a.len() < 2 {
        return 0.0;
    }
    let mut gaps: Vec<f64> = a.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(|x, y| x.total_cmp(y));
    let spacing = gaps[gaps.len() / 2];
    a[a.len() - 1] - a[0] + spacing
}

/// Distinct folded angles with the mean of the projections mapped onto them.
fn fold_projections(p: &Projections) -> Vec<(f64, Vec<f64>)> {
    let mut out: Vec<(f64, Vec<f64>, usize)> = Vec::new();
    for (th, vals) in p.angles.iter().zip(&p.values) {
        let (f, flip) = fold_angle(*th);
        let v: Vec<f64> = if flip { vals.iter().rev().copied().collect() } else { vals.clone() };
        match out.iter_mut().find(|(g, _, _)| (g - f).abs() < 1e-9) {
            Some((_, acc, count)) => {
                for (a, b) in acc.iter_mut().zip(&v) {
                    *a += b;
                }
                *count += 1;
            }
            None => out.push((f, v, 1)),
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out.into_iter()
        .map(|(f, v, c)| (f, v.into_iter().map(|x| x / c as f64).collect()))
        .collect()
}

/// Insert `factor - 1` linearly blended projections into every cyclic gap of
/// the folded sinogram. Crossing `pi` mirrors the axis.
fn upsample_angles(folded: Vec<(f64, Vec<f64>)>, factor: usize) -> Vec<(f64, Vec<f64>)> {
    if factor <= 1 {
        return folded;
    }
    let k = folded.len();
    let mut out = Vec::with_capacity(k * factor);
    for i in 0..k {
        let (a, va) = &folded[i];
        let (b, vb): (f64, Vec<f64>) = if i + 1 < k {
            (folded[i + 1].0, folded[i + 1].1.clone())
        } else {
            (folded[0].0 + PI, folded[0].1.iter().rev().copied().collect())
        };
        out.push((*a, va.clone()));
        for m in 1..factor {
            let t = m as f64 / factor as f64;
            let th = a + t * (b - a);
            let v: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| (1.0 - t) * x + t * y).collect();
            if th < PI {
                out.push((th, v));
            } else {
                out.push((th - PI, v.into_iter().rev().collect()));
            }
        }
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    out
}

/// Back-projection weights: half the cyclic gap (period pi) on either side.
fn angle_weights(folded: &[f64]) -> Vec<f64> {
    let k = folded.len();
    (0..k)
        .map(|i| {
            let prev = if i == 0 { folded[k - 1] - PI } else { folded[i - 1] };
            let next = if i + 1 == k { folded[0] + PI } else { folded[i + 1] };
            0.5 * (next - prev)
        })
        .collect()
}

/// Ramp-filter one projection (spatial Ram-Lak kernel, optional Hann window).
fn ramp_filter(values: &[f64], step: f64, hann: bool, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = values.len();
    let size = (2 * n).next_power_of_two();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);

    let mut kernel = vec![Complex::new(0.0, 0.0); size];
    kernel[0].re = 1.0 / (4.0 * step * step);
    for k in (1..size / 2).step_by(2) {
        let v = -1.0 / (PI * PI * (k * k) as f64 * step * step);
        kernel[k].re = v;
        kernel[size - k].re = v;
    }
    fft.process(&mut kernel);
    if hann {
        for (j, h) in kernel.iter_mut().enumerate() {
            let f = j.min(size - j) as f64 / size as f64;
            *h *= 0.5 + 0.5 * (2.0 * PI * f).cos();
        }
    }

    let mut buf: Vec<Complex<f64>> = values
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    fft.process(&mut buf);
    for (b, h) in buf.iter_mut().zip(&kernel) {
        *b *= h;
    }
    ifft.process(&mut buf);
    let norm = step / size as f64;
    buf[..n].iter().map(|c| c.re * norm).collect()
}

/// Unnormalized filtered back-projection; linear in the projections.
pub fn filtered_backprojection(p: &Projections, grid: &GridSpec, opts: &ReconOptions) -> Result<PhaseSpaceDensity> {
    if p.angles.len() != p.values.len() || p.values.iter().any(|v| v.len() != p.axis.len) {
        return Err(Error::invalid("projection values do not match angles and axis"));
    }
    if p.axis.len < 2 {
        return Err(Error::invalid("projection axis needs at least two points"));
    }
    let folded = fold_projections(p);
    if folded.len() < 3 {
        return Err(Error::Coverage(format!(
            "reconstruction needs at least 3 distinct angles, got {}",
            folded.len()
        )));
    }
    let coverage = angular_coverage(&p.angles);
    if coverage < PI - 1e-9 {
        return Err(Error::Coverage(format!(
            "tomography angles cover {:.3} rad, need at least pi",
            coverage
        )));
    }
    let folded = upsample_angles(folded, opts.angular_upsample);
    let angles: Vec<f64> = folded.iter().map(|(a, _)| *a).collect();
    let weights = angle_weights(&angles);
    let mut planner = FftPlanner::new();
    let filtered: Vec<Vec<f64>> = folded
        .iter()
        .map(|(_, v)| ramp_filter(v, p.axis.step, opts.hann, &mut planner))
        .collect();

    let axis = Axis::symmetric(grid.half_width, grid.step)?;
    let n = axis.len;
    let mut values = vec![0.0; n * n];
    for ((th, q), w) in angles.iter().zip(&filtered).zip(&weights) {
        let (s, c) = th.sin_cos();
        for i in 0..n {
            let x = axis.point(i);
            let row = &mut values[i * n..(i + 1) * n];
            for (j, out) in row.iter_mut().enumerate() {
                let pp = axis.point(j);
                *out += w * p.axis.interpolate(q, x * c + pp * s);
            }
        }
    }
    Ok(PhaseSpaceDensity {
        axis,
        values,
        scale: 1.0,
    })
}

/// Filtered back-projection normalized to unit integral.
pub fn inverse_radon(p: &Projections, grid: &GridSpec, opts: &ReconOptions) -> Result<PhaseSpaceDensity> {
    let mut d = filtered_backprojection(p, grid, opts)?;
    let total = d.integral();
    if !(total > 0.0) {
        return Err(Error::Statistics(format!("reconstruction integral is {total}, cannot normalize")));
    }
    let scale = 1.0 / total;
    d.values.iter_mut().for_each(|v| *v *= scale);
    d.scale = scale;
    Ok(d)
}

/// Forward projection of a density onto `axis` at `angles` (linear splitting
/// of each cell's mass between neighbouring bins).
pub fn project(density: &PhaseSpaceDensity, angles: &[f64], axis: Axis) -> Projections {
    let n = density.axis.len;
    let cell = density.axis.step * density.axis.step;
    let values = angles
        .iter()
        .map(|&th| {
            let (s, c) = th.sin_cos();
            let mut out = vec![0.0; axis.len];
            for i in 0..n {
                let x = density.axis.point(i);
                for j in 0..n {
                    let m = density.at(i, j) * cell;
                    let u = (x * c + density.axis.point(j) * s - axis.start) / axis.step;
                    if u < 0.0 || u >= (axis.len - 1) as f64 {
                        continue;
                    }
                    let k = u.floor() as usize;
                    let f = u - k as f64;
                    out[k] += m * (1.0 - f);
                    out[k + 1] += m * f;
                }
            }
            out.iter_mut().for_each(|v| *v /= axis.step);
            out
        })
        .collect();
    Projections {
        angles: angles.to_vec(),
        axis,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn nine() -> Vec<f64> {
        (1..=9).map(|k| k as f64 * 2.0 * PI / 9.0).collect()
    }

    #[test]
    fn folding() {
        let (f, flip) = fold_angle(1.5 * PI);
        assert_relative_eq!(f, 0.5 * PI, epsilon = 1e-12);
        assert!(flip);
        assert_eq!(fold_angle(0.25), (0.25, false));
        let (f, flip) = fold_angle(2.0 * PI);
        assert!(f.abs() < 1e-12 && !flip);
    }

    #[test]
    fn coverage() {
        assert_relative_eq!(angular_coverage(&(0..9).map(|k| k as f64 * PI / 9.0).collect::<Vec<_>>()), PI, epsilon = 1e-12);
        assert!(angular_coverage(&nine()) > PI);
        assert!(angular_coverage(&[0.0, 0.2, 0.4, 0.6]) < PI);
        let axis = Axis::symmetric(5.0, 0.1).unwrap();
        let p = Projections::gaussian(&[0.1, 0.5, 0.9, 1.3], axis, [[1.0, 0.0], [0.0, 1.0]]);
        let g = GridSpec { half_width: 4.0, step: 0.1 };
        assert!(matches!(inverse_radon(&p, &g, &ReconOptions::default()), Err(Error::Coverage(_))));
    }

    #[test]
    fn weights_sum_to_pi() {
        let w = angle_weights(&[0.0, 0.5, 2.0]);
        assert_relative_eq!(w.iter().sum::<f64>(), PI, epsilon = 1e-12);
    }

    #[test]
    fn isotropic_gaussian_round_trip() {
        let axis = Axis::symmetric(8.0, 0.05).unwrap();
        let p = Projections::gaussian(&nine(), axis, [[1.0, 0.0], [0.0, 1.0]]);
        let d = inverse_radon(&p, &GridSpec { half_width: 4.0, step: 0.05 }, &ReconOptions::default()).unwrap();
        let (mean, cov) = d.moments();
        assert!(mean[0].abs() < 1e-3 && mean[1].abs() < 1e-3);
        assert!((cov[0][0].sqrt() - 1.0).abs() < 0.05, "{cov:?}");
        assert!((cov[1][1].sqrt() - 1.0).abs() < 0.05, "{cov:?}");
        let (i, j, _) = d.peak();
        assert_eq!((i, j), (d.n() / 2, d.n() / 2));
    }

    #[test]
    fn linear_in_projections() {
        let axis = Axis::symmetric(6.0, 0.1).unwrap();
        let p = Projections::gaussian(&nine(), axis, [[2.0, 0.3], [0.3, 1.0]]);
        let mut q = p.clone();
        q.values.iter_mut().flatten().for_each(|v| *v *= 3.5);
        let g = GridSpec { half_width: 3.0, step: 0.1 };
        let a = filtered_backprojection(&p, &g, &ReconOptions::default()).unwrap();
        let b = filtered_backprojection(&q, &g, &ReconOptions::default()).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((3.5 * x - y).abs() < 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn delta_marginals_concentrate_at_origin() {
        let axis = Axis::symmetric(3.0, 0.1).unwrap();
        let mut values = vec![vec![0.0; axis.len]; 9];
        for v in values.iter_mut() {
            v[axis.len / 2] = 1.0 / axis.step;
        }
        let p = Projections { angles: nine(), axis, values };
        let d = inverse_radon(&p, &GridSpec { half_width: 2.0, step: 0.1 }, &ReconOptions::default()).unwrap();
        let (i, j, _) = d.peak();
        assert_eq!((i, j), (d.n() / 2, d.n() / 2));
    }

    #[test]
    fn upsample_mirrors_across_pi() {
        let folded = vec![(0.0, vec![1.0, 0.0, 0.0]), (0.5 * PI, vec![0.0, 2.0, 0.0])];
        let up = upsample_angles(folded.clone(), 2);
        assert_eq!(up.len(), 4);
        assert_eq!(up[0], folded[0]);
        assert_eq!(up[2], folded[1]);
        assert_relative_eq!(up[1].0, 0.25 * PI);
        assert_eq!(up[1].1, vec![0.5, 1.0, 0.0]);
        // Between pi/2 and pi the first projection enters reversed.
        assert_relative_eq!(up[3].0, 0.75 * PI);
        assert_eq!(up[3].1, vec![0.0, 1.0, 0.5]);
        assert_eq!(upsample_angles(folded.clone(), 1), folded);
    }

    #[test]
    fn anisotropic_axes_recovered() {
        let (a, b, phi) = (46.6, 92.5, 0.6_f64);
        let (s, c) = phi.sin_cos();
        let off = (a * a - b * b) * s * c;
        let cov = [[a * a * c * c + b * b * s * s, off], [off, a * a * s * s + b * b * c * c]];
        let half = 4.0 * b;
        let step = half / 40.0;
        let axis = Axis::symmetric(half * 2f64.sqrt() + step, step).unwrap();
        let p = Projections::gaussian(&nine(), axis, cov);
        let d = inverse_radon(&p, &GridSpec { half_width: half, step }, &ReconOptions::default()).unwrap();
        let [lo, hi] = d.gaussian_fit(0.1).unwrap().principal_sds();
        assert!((lo / a - 1.0).abs() < 0.05, "{lo}");
        assert!((hi / b - 1.0).abs() < 0.05, "{hi}");
        assert!(((hi / lo) / (b / a) - 1.0).abs() < 0.05);
    }

    #[test]
    fn fwhm_converges_with_grid() {
        use crate::tomography::contour::fwhm_contour;
        let cov = [[50.0f64.powi(2), 0.0], [0.0, 90.0f64.powi(2)]];
        let half = 360.0;
        let fwhm = |step: f64| {
            let axis = Axis::symmetric(half * 2f64.sqrt() + step, step).unwrap();
            let p = Projections::gaussian(&nine(), axis, cov);
            let d = inverse_radon(&p, &GridSpec { half_width: half, step }, &ReconOptions::default()).unwrap();
            fwhm_contour(&d).unwrap().mean_fwhm
        };
        let (coarse, fine) = (fwhm(9.0), fwhm(4.5));
        assert!((fine / coarse - 1.0).abs() < 0.01, "{coarse} {fine}");
    }
}
