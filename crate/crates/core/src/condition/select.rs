//! Post-selection of trains whose conditioning pulses stayed in the linear
//! part of the transduction curve.

use serde::{Deserialize, Serialize};

use super::sequence::{ConditionalSample, Conditioning};
use crate::calibrate::invert_transduction;
use crate::error::{Error, Result};
use crate::stats::{norm_cdf, norm_sf};

/// Which raw readings must pass the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Every preparation pulse entering the quadrature estimates.
    Conditioning(Conditioning),
    /// The tomography pulse itself.
    Tomography,
}

impl Selection {
    fn passes(self, s: &ConditionalSample, threshold: f64) -> bool {
        match self {
            Selection::Conditioning(c) => c
                .used_prep_pulses()
                .iter()
                .all(|&k| s.h_prep[k].abs() < threshold),
            Selection::Tomography => s.h_tomo.abs() < threshold,
        }
    }

    fn wrong_branch(self, s: &ConditionalSample) -> bool {
        match self {
            Selection::Conditioning(c) => c.used_prep_pulses().iter().any(|&k| !s.lower_branch[k]),
            Selection::Tomography => false,
        }
    }
}

/// Bookkeeping of one post-selection pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub threshold: f64,
    pub n_in: usize,
    pub n_accepted: usize,
    pub retention: f64,
    /// Accepted trains with a conditioning pulse on the upper branch.
    pub wrong_branch: usize,
    pub wrong_branch_fraction: f64,
}

/// Keep the samples passing `selection` at `threshold` (H' units).
pub fn post_select(
    samples: &[ConditionalSample],
    selection: Selection,
    threshold: f64,
) -> Result<(Vec<ConditionalSample>, SelectionStats)> {
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!("threshold must be positive, got {threshold}")));
    }
    let kept: Vec<ConditionalSample> = samples
        .iter()
        .filter(|s| selection.passes(s, threshold))
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptySelection);
    }
    let wrong = kept.iter().filter(|s| selection.wrong_branch(s)).count();
    let stats = SelectionStats {
        threshold,
        n_in: samples.len(),
        n_accepted: kept.len(),
        retention: kept.len() as f64 / samples.len() as f64,
        wrong_branch: wrong,
        wrong_branch_fraction: wrong as f64 / kept.len() as f64,
    };
    Ok((kept, stats))
}

/// Noise-free expectations for a Gaussian displacement of SD `sigma_delta`
/// (in `beta x` units) read through the resonant transduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionBounds {
    /// Where the lower branch reaches the threshold, in units of the thermal SD.
    pub lower_crossing: f64,
    /// Where the upper branch falls back below the threshold.
    pub upper_crossing: f64,
    /// Fraction of single readings passing.
    pub retention: f64,
    /// Share of passing readings that come from the upper branch.
    pub wrong_branch_fraction: f64,
}

pub fn selection_bounds(threshold: f64, sigma_delta: f64) -> Result<SelectionBounds> {
    if !(sigma_delta > 0.0) {
        return Err(Error::invalid("sigma_delta must be positive"));
    }
    let b = invert_transduction(threshold)?;
    let lo = b.lower / sigma_delta;
    let hi = b.upper / sigma_delta;
    let inner = 2.0 * norm_cdf(lo) - 1.0;
    let outer = 2.0 * norm_sf(hi);
    Ok(SelectionBounds {
        lower_crossing: lo,
        upper_crossing: hi,
        retention: inner + outer,
        wrong_branch_fraction: outer / (inner + outer),
    })
}
