//! Fitting the noise-smoothed thermal model to a histogram of detector
//! outputs, which fixes the detector scale `A` and the thermal width
//! `sigma_delta`.

use serde::{Deserialize, Serialize};

use super::model::{convolve_noise, HistogramModel, SmoothedPdf, UniformGrid};
use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LmOptions};
use crate::stats::{iqr, quantile_sorted};

/// Counts on strictly increasing bin edges.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total_n: u64,
}

impl BinnedHistogram {
    pub fn new(edges: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if edges.len() != counts.len() + 1 || counts.is_empty() {
            return Err(Error::invalid("histogram needs len(edges) == len(counts) + 1 >= 2"));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("histogram edges must be strictly increasing"));
        }
        let total_n = counts.iter().sum();
        Ok(BinnedHistogram {
            edges,
            counts,
            total_n,
        })
    }

    /// Equal-width bins over `[lo, hi]`; samples outside are dropped.
    pub fn from_samples(samples: &[f64], lo: f64, hi: f64, n_bins: usize) -> Result<Self> {
        if n_bins == 0 || !(hi > lo) {
            return Err(Error::invalid("need hi > lo and at least one bin"));
        }
        let width = (hi - lo) / n_bins as f64;
        let edges: Vec<f64> = (0..=n_bins).map(|k| lo + k as f64 * width).collect();
        let mut counts = vec![0u64; n_bins];
        for &x in samples {
            if x < lo || x > hi {
                continue;
            }
            let k = (((x - lo) / width) as usize).min(n_bins - 1);
            counts[k] += 1;
        }
        Self::new(edges, counts)
    }

    /// Bins with Freedman-Diaconis width `2 IQR / n^(1/3)` spanning the sample
    /// range.
    pub fn freedman_diaconis(samples: &[f64]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Statistics("need at least two samples to bin".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let lo = sorted[0];
        let hi = sorted[sorted.len() - 1];
        if !(hi > lo) {
            return Err(Error::Statistics("all samples are identical".into()));
        }
        let mut width = 2.0 * iqr(samples) / (samples.len() as f64).cbrt();
        if !(width > 0.0) {
            width = (hi - lo) / 10.0;
        }
        let n_bins = ((hi - lo) / width).ceil().clamp(1.0, 10_000.0) as usize;
        Self::from_samples(samples, lo, hi, n_bins)
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Counts normalized to a probability density.
    pub fn densities(&self) -> Vec<f64> {
        let n = self.total_n.max(1) as f64;
        self.counts
            .iter()
            .zip(self.widths())
            .map(|(&c, w)| c as f64 / (n * w))
            .collect()
    }

    /// Index of the most populated bin in the given half (`positive` selects
    /// centers > 0).
    pub fn peak_bin(&self, positive: bool) -> Option<usize> {
        let centers = self.centers();
        (0..self.counts.len())
            .filter(|&k| (centers[k] > 0.0) == positive)
            .max_by_key(|&k| self.counts[k])
    }
}

/// Starting values for the calibration fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitInit {
    pub scale_a: f64,
    pub sigma_delta: f64,
}

impl FitInit {
    /// Data-driven guesses: the distribution ends near `+/-A/2`, and its
    /// central plateau sits at `1 / (A sqrt(2 pi) sigma_delta)`.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.len() < 10 {
            return Err(Error::Statistics("too few samples for a calibration fit".into()));
        }
        let mut abs: Vec<f64> = samples.iter().map(|v| v.abs()).collect();
        abs.sort_by(|a, b| a.total_cmp(b));
        let scale_a = 2.0 * quantile_sorted(&abs, 0.98);
        let window = 0.05 * scale_a;
        let central = samples.iter().filter(|v| v.abs() < window).count() as f64;
        let plateau = central / (samples.len() as f64 * 2.0 * window);
        let sigma_delta = if plateau > 0.0 {
            1.0 / (scale_a * (2.0 * std::f64::consts::PI).sqrt() * plateau)
        } else {
            1.0
        };
        Ok(FitInit {
            scale_a,
            sigma_delta: sigma_delta.clamp(1e-3, 1e3),
        })
    }
}

/// Fitted model plus diagnostics. Serializes to the calibration JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub scale_a: f64,
    pub sigma_delta: f64,
    pub noise_sd: f64,
    pub residual_chi2: f64,
    pub n_samples: u64,
    pub n_bins: usize,
    pub iterations: usize,
    pub scale_a_se: Option<f64>,
    pub sigma_delta_se: Option<f64>,
    pub warnings: Vec<String>,
}

impl CalibrationFit {
    pub fn model(&self) -> HistogramModel {
        HistogramModel {
            sigma_delta: self.sigma_delta,
            scale_a: self.scale_a,
            noise_sd: self.noise_sd,
        }
    }

    /// Reduced chi-square of the binned fit.
    pub fn reduced_chi2(&self) -> f64 {
        self.residual_chi2 / (self.n_bins.saturating_sub(2).max(1)) as f64
    }
}

/// Expected probability mass of each histogram bin (detector units) under
/// the model.
pub fn model_bin_masses(model: &HistogramModel, pdf: &SmoothedPdf, hist: &BinnedHistogram) -> Vec<f64> {
    hist.edges
        .windows(2)
        .map(|w| pdf.mass_between(w[0] / model.scale_a, w[1] / model.scale_a))
        .collect()
}

/// Smoothed model density in detector units at `v`.
pub fn model_density(model: &HistogramModel, pdf: &SmoothedPdf, v: f64) -> f64 {
    pdf.density_at(v / model.scale_a) / model.scale_a
}

fn looks_single_peaked(hist: &BinnedHistogram) -> bool {
    let d = hist.densities();
    let centers = hist.centers();
    let n = d.len();
    if n < 5 {
        return true;
    }
    let center = (0..n)
        .min_by(|&a, &b| centers[a].abs().total_cmp(&centers[b].abs()))
        .unwrap();
    let max = d.iter().cloned().fold(0.0, f64::max);
    d[center] >= 0.8 * max
}

/// Weighted least-squares fit of `(scale_a, sigma_delta)` of the smoothed
/// model to the binned sample, with Poisson weights. `noise_sd` is held fixed
/// (H' units).
pub fn fit_calibration(
    hist: &BinnedHistogram,
    noise_sd: f64,
    init: FitInit,
    opts: LmOptions,
) -> Result<CalibrationFit> {
    if hist.total_n < 10 {
        return Err(Error::Statistics("too few samples for a calibration fit".into()));
    }
    if !(noise_sd > 0.0) {
        return Err(Error::invalid("noise_sd must be positive"));
    }
    if !(init.scale_a > 0.0 && init.sigma_delta > 0.0) {
        return Err(Error::invalid("initial guesses must be positive"));
    }
    let mut warnings = Vec::new();
    if looks_single_peaked(hist) {
        let msg = "histogram is single-peaked (sigma_delta << 1): scale and width are poorly constrained";
        log::warn!("{msg}");
        warnings.push(msg.to_string());
    }

    let n = hist.total_n as f64;
    let counts: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let weights: Vec<f64> = counts.iter().map(|&c| 1.0 / c.max(1.0).sqrt()).collect();
    let grid = UniformGrid::for_model(&HistogramModel {
        sigma_delta: 1.0,
        scale_a: 1.0,
        noise_sd,
    });

    let residuals = |p: &[f64]| -> Vec<f64> {
        let model = HistogramModel {
            scale_a: p[0].exp(),
            sigma_delta: p[1].exp(),
            noise_sd,
        };
        match convolve_noise(&model, &grid) {
            Ok(pdf) => model_bin_masses(&model, &pdf, hist)
                .iter()
                .zip(&counts)
                .zip(&weights)
                .map(|((m, c), w)| (n * m - c) * w)
                .collect(),
            Err(_) => vec![f64::NAN; counts.len()],
        }
    };

    let report = levenberg_marquardt(
        residuals,
        &[init.scale_a.ln(), init.sigma_delta.ln()],
        opts,
    )?;
    let scale_a = report.params[0].exp();
    let sigma_delta = report.params[1].exp();
    let dof = hist.counts.len().saturating_sub(2).max(1) as f64;
    let s2 = report.chi2 / dof;
    let (scale_a_se, sigma_delta_se) = match &report.covariance {
        Some(c) => (
            Some(scale_a * (c[0][0] * s2).sqrt()),
            Some(sigma_delta * (c[1][1] * s2).sqrt()),
        ),
        None => (None, None),
    };
    if sigma_delta < 0.2 && warnings.is_empty() {
        warnings.push("fitted sigma_delta << 1: transduction is nearly linear".into());
    }
    Ok(CalibrationFit {
        scale_a,
        sigma_delta,
        noise_sd,
        residual_chi2: report.chi2,
        n_samples: hist.total_n,
        n_bins: hist.counts.len(),
        iterations: report.iterations,
        scale_a_se,
        sigma_delta_se,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechsim::RngStream;
    use crate::transduce::homodyne_eq1;

    fn synth(n: usize, a: f64, sigma_delta: f64, noise: f64, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 0);
        (0..n)
            .map(|_| {
                let d = sigma_delta * rng.normal();
                a * (homodyne_eq1(d, 1.0) + noise * rng.normal())
            })
            .collect()
    }

    #[test]
    fn histogram_validation() {
        assert!(BinnedHistogram::new(vec![0.0, 1.0, 1.0], vec![1, 2]).is_err());
        assert!(BinnedHistogram::new(vec![0.0, 1.0], vec![1, 2]).is_err());
        let h = BinnedHistogram::from_samples(&[0.1, 0.2, 0.9, 5.0], 0.0, 1.0, 2).unwrap();
        assert_eq!(h.counts, vec![2, 1]);
        assert_eq!(h.total_n, 3);
        assert!(BinnedHistogram::freedman_diaconis(&[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn round_trip_recovers_parameters() {
        let (a, sd, noise) = (1.7, 0.71, 0.0163);
        let xs = synth(200_000, a, sd, noise, 99);
        let hist = BinnedHistogram::freedman_diaconis(&xs).unwrap();
        let init = FitInit::from_samples(&xs).unwrap();
        let fit = fit_calibration(&hist, noise, init, LmOptions::default()).unwrap();
        assert!((fit.scale_a / a - 1.0).abs() < 0.02, "{fit:?}");
        assert!((fit.sigma_delta / sd - 1.0).abs() < 0.02, "{fit:?}");
        assert!(fit.warnings.is_empty());
        assert!(fit.reduced_chi2() < 2.0, "{}", fit.reduced_chi2());
    }

    #[test]
    fn peaks_stay_at_half_scale_for_any_width() {
        for sd in [0.6, 0.71, 1.0, 2.0, 5.0] {
            let m = HistogramModel {
                sigma_delta: sd,
                scale_a: 1.0,
                noise_sd: 0.0163,
            };
            let pdf = convolve_noise(&m, &UniformGrid::for_model(&m)).unwrap();
            let peaks = pdf.local_maxima();
            let outer = peaks.last().copied().unwrap();
            assert!((outer - 0.5).abs() < 2.0 * m.noise_sd, "sd = {sd}: {peaks:?}");
            assert!((peaks[0] + 0.5).abs() < 2.0 * m.noise_sd);
        }
    }

    #[test]
    fn zero_width_histogram_warns() {
        let xs = synth(20_000, 1.0, 1e-6, 0.0163, 3);
        let hist = BinnedHistogram::freedman_diaconis(&xs).unwrap();
        let init = FitInit::from_samples(&xs).unwrap();
        match fit_calibration(&hist, 0.0163, init, LmOptions::default()) {
            Ok(fit) => assert!(!fit.warnings.is_empty()),
            Err(e) => assert!(matches!(e, Error::FitFailure { .. }), "{e}"),
        }
    }
}
