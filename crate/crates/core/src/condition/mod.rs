//! Conditional-state preparation: the pulse train, post-selection, noise-floor
//! factors, Gaussian measurement update and the closed-form variances.

mod analytic;
mod gaussian;
mod select;
mod sequence;

pub use analytic::{
    analytic_variance, decoherence_envelope, full_sequence_variance, ideal_estimator_samples,
    mode_factor, noise_correction, sequence_variance, single_pulse_width, Estimator, ModeTerm,
    NoiseKind,
};
pub use gaussian::{gaussian_update, imprecision_backaction, uncertainty_product, GaussianState};
pub use select::{post_select, selection_bounds, Selection, SelectionBounds, SelectionStats};
pub use sequence::{
    conditional_value, run_train, ConditionalSample, Conditioning, LinearConversion,
    PulseSchedule, TrainSetup, PREP_PHASES,
};
