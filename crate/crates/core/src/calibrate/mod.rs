//! Thermal-histogram calibration of the detector output.

mod fit;
mod model;

pub use fit::{
    fit_calibration, model_bin_masses, model_density, BinnedHistogram, CalibrationFit, FitInit,
};
pub use model::{
    branch_jacobians, convolve_noise, half_period_variance_error, invert_transduction,
    thermal_cdf, thermal_pdf, Branches, HistogramModel, SmoothedPdf, UniformGrid,
};
