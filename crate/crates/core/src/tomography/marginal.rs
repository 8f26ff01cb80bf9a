//! Angle-indexed marginals and their widths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LmOptions};
use crate::stats::{bootstrap_se, mean, norm_cdf, std_dev};

pub const MIN_WIDTH_SAMPLES: usize = 100;

/// Conditional samples grouped by tomography angle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarginalSet {
    pub angles: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

impl MarginalSet {
    pub fn push(&mut self, angle: f64, samples: Vec<f64>) {
        self.angles.push(angle);
        self.samples.push(samples);
    }

    pub fn counts(&self) -> Vec<usize> {
        self.samples.iter().map(Vec::len).collect()
    }

    /// Histogram every angle onto the axis `[-half_width, half_width]` with
    /// bin width `step`, as probability densities.
    pub fn bin(&self, half_width: f64, step: f64) -> Result<Projections> {
        let axis = Axis::symmetric(half_width, step)?;
        let values = self
            .samples
            .iter()
            .map(|s| {
                let mut d = vec![0.0; axis.len];
                let norm = 1.0 / (s.len().max(1) as f64 * step);
                for &v in s {
                    let k = ((v - axis.start) / step + 0.5).floor();
                    if k >= 0.0 && (k as usize) < axis.len {
                        d[k as usize] += norm;
                    }
                }
                d
            })
            .collect();
        Ok(Projections {
            angles: self.angles.clone(),
            axis,
            values,
        })
    }
}

/// Uniform sample points `start + k step`, `k < len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl Axis {
    /// Odd number of points centred on zero, reaching at least `half_width`.
    pub fn symmetric(half_width: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(half_width > 0.0) {
            return Err(Error::invalid("axis needs positive half width and step"));
        }
        let n = (half_width / step).ceil() as usize;
        Ok(Axis {
            start: -(n as f64) * step,
            step,
            len: 2 * n + 1,
        })
    }

    pub fn point(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.point(k)).collect()
    }

    /// Linear interpolation of `values` on this axis; zero outside.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let u = (x - self.start) / self.step;
        if u < 0.0 || u > (self.len - 1) as f64 {
            return 0.0;
        }
        let k = (u.floor() as usize).min(self.len - 2);
        let f = u - k as f64;
        values[k] * (1.0 - f) + values[k + 1] * f
    }
}

/// Marginal densities on a common axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub angles: Vec<f64>,
    pub axis: Axis,
    pub values: Vec<Vec<f64>>,
}

impl Projections {
    /// Analytic marginals of a zero-mean Gaussian with covariance
    /// `[[vxx, vxp], [vxp, vpp]]`, integrated over each bin.
    pub fn gaussian(angles: &[f64], axis: Axis, cov: [[f64; 2]; 2]) -> Self {
        let values = angles
            .iter()
            .map(|&th| {
                let (s, c) = th.sin_cos();
                let var = c * c * cov[0][0] + 2.0 * s * c * cov[0][1] + s * s * cov[1][1];
                let sd = var.sqrt();
                (0..axis.len)
                    .map(|k| {
                        let x = axis.point(k);
                        let h = 0.5 * axis.step;
                        (norm_cdf((x + h) / sd) - norm_cdf((x - h) / sd)) / axis.step
                    })
                    .collect()
            })
            .collect();
        Projections {
            angles: angles.to_vec(),
            axis,
            values,
        }
    }

    /// SD of a Gaussian least-squares fitted to each profile; insensitive to
    /// the low pedestal that re-projected streaks add.
    pub fn fitted_sds(&self) -> Result<Vec<f64>> {
        let x = self.axis.points();
        let moments = self.sds();
        self.values
            .iter()
            .zip(moments)
            .map(|(d, sd0)| {
                let peak = d.iter().cloned().fold(0.0, f64::max);
                if !(peak > 0.0) {
                    return Err(Error::Statistics("profile has no positive value".into()));
                }
                let m0: f64 = d.iter().sum();
                let mu0 = d.iter().zip(&x).map(|(v, x)| v * x).sum::<f64>() / m0;
                let residuals = |p: &[f64]| -> Vec<f64> {
                    let (a, mu, sd) = (p[0].exp(), p[1], p[2].exp());
                    d.iter()
                        .zip(&x)
                        .map(|(v, x)| (a * (-0.5 * ((x - mu) / sd).powi(2)).exp() - v) / peak)
                        .collect()
                };
                let p0 = [peak.ln(), mu0, sd0.max(self.axis.step).ln()];
                let rep = levenberg_marquardt(residuals, &p0, LmOptions::default())?;
                Ok(rep.params[2].exp())
            })
            .collect()
    }

    /// SD of each marginal from its binned second moment.
    pub fn sds(&self) -> Vec<f64> {
        let x = self.axis.points();
        self.values
            .iter()
            .map(|d| {
                let m0: f64 = d.iter().sum();
                let m1: f64 = d.iter().zip(&x).map(|(v, x)| v * x).sum::<f64>() / m0;
                let m2: f64 = d.iter().zip(&x).map(|(v, x)| v * (x - m1) * (x - m1)).sum::<f64>() / m0;
                m2.sqrt()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalWidth {
    /// SD of a Gaussian fitted to the binned samples.
    pub gaussian_sd: f64,
    pub sample_sd: f64,
    /// Bootstrap standard error of the sample SD.
    pub bootstrap_se: f64,
    pub n: usize,
}

/// Width of one marginal. Needs at least 100 samples.
pub fn marginal_width(samples: &[f64], seed: u64) -> Result<MarginalWidth> {
    let n = samples.len();
    if n < MIN_WIDTH_SAMPLES {
        return Err(Error::Statistics(format!(
            "marginal width needs at least {MIN_WIDTH_SAMPLES} samples, got {n}"
        )));
    }
    let sample_sd = std_dev(samples);
    if sample_sd == 0.0 {
        return Ok(MarginalWidth {
            gaussian_sd: 0.0,
            sample_sd: 0.0,
            bootstrap_se: 0.0,
            n,
        });
    }
    let se = bootstrap_se(samples, 200, seed, std_dev)?;
    let gaussian_sd = gaussian_fit_sd(samples, mean(samples), sample_sd).unwrap_or_else(|e| {
        log::warn!("Gaussian width fit failed ({e}); using the sample SD");
        sample_sd
    });
    Ok(MarginalWidth {
        gaussian_sd,
        sample_sd,
        bootstrap_se: se,
        n,
    })
}

fn gaussian_fit_sd(samples: &[f64], mu0: f64, sd0: f64) -> Result<f64> {
    let n = samples.len() as f64;
    let bins = ((2.0 * n.cbrt()).ceil() as usize).clamp(10, 200);
    let lo = mu0 - 4.0 * sd0;
    let width = 8.0 * sd0 / bins as f64;
    let mut counts = vec![0.0; bins];
    for &v in samples {
        let k = ((v - lo) / width).floor();
        if k >= 0.0 && (k as usize) < bins {
            counts[k as usize] += 1.0;
        }
    }
    let weights: Vec<f64> = counts.iter().map(|c: &f64| 1.0 / c.max(1.0).sqrt()).collect();
    let residuals = |p: &[f64]| -> Vec<f64> {
        let (mu, sd) = (p[0], p[1].exp());
        (0..bins)
            .map(|k| {
                let a = lo + k as f64 * width;
                let m = n * (norm_cdf((a + width - mu) / sd) - norm_cdf((a - mu) / sd));
                (m - counts[k]) * weights[k]
            })
            .collect()
    };
    let report = levenberg_marquardt(residuals, &[mu0, sd0.ln()], LmOptions::default())?;
    Ok(report.params[1].exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechsim::RngStream;
    use approx::assert_relative_eq;

    #[test]
    fn unit_normal_width() {
        let mut rng = RngStream::new(11, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.normal()).collect();
        let w = marginal_width(&xs, 1).unwrap();
        assert!((w.gaussian_sd - 1.0).abs() < 0.02, "{w:?}");
        assert!((w.sample_sd - 1.0).abs() < 0.02, "{w:?}");
        assert!(w.bootstrap_se > 0.003 && w.bootstrap_se < 0.012, "{w:?}");
    }

    #[test]
    fn constant_and_short_samples() {
        let w = marginal_width(&[3.0; 200], 1).unwrap();
        assert_eq!(w.gaussian_sd, 0.0);
        assert!(matches!(marginal_width(&[1.0; 99], 1), Err(Error::Statistics(_))));
    }

    #[test]
    fn binning_normalizes() {
        let mut m = MarginalSet::default();
        let mut rng = RngStream::new(2, 0);
        m.push(0.3, (0..5000).map(|_| 2.0 * rng.normal()).collect());
        let p = m.bin(12.0, 0.25).unwrap();
        let total: f64 = p.values[0].iter().sum::<f64>() * 0.25;
        assert_relative_eq!(total, 1.0, epsilon = 1e-3);
        assert_relative_eq!(p.sds()[0], 2.0, epsilon = 0.08);
        assert_eq!(p.axis.point(p.axis.len / 2), 0.0);
    }

    #[test]
    fn analytic_gaussian_projections() {
        let axis = Axis::symmetric(10.0, 0.05).unwrap();
        let p = Projections::gaussian(&[0.0, std::f64::consts::FRAC_PI_2], axis, [[4.0, 0.0], [0.0, 1.0]]);
        let sd = p.sds();
        assert_relative_eq!(sd[0], 2.0, epsilon = 1e-3);
        assert_relative_eq!(sd[1], 1.0, epsilon = 1e-3);
    }
}
