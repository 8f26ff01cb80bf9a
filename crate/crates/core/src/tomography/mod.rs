//! Marginal widths and phase-space reconstruction of the conditional state.

mod contour;
mod marginal;
mod radon;

pub use contour::{fwhm_contour, FwhmContour, GAUSSIAN_FWHM_PER_SD};
pub use marginal::{marginal_width, Axis, MarginalSet, MarginalWidth, Projections, MIN_WIDTH_SAMPLES};
pub use radon::{
    angular_coverage, filtered_backprojection, fold_angle, inverse_radon, project, DensityGaussian, GridSpec,
    PhaseSpaceDensity, ReconOptions,
};
