#ifndef PULSEMECH_H
#define PULSEMECH_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum PmStatus {
  PM_STATUS_OK = 0,
  PM_STATUS_NULL_POINTER = 1,
  PM_STATUS_INVALID_ARGUMENT = 2,
  PM_STATUS_NO_REAL_SOLUTION = 3,
  PM_STATUS_COVERAGE = 4,
  PM_STATUS_FIT_FAILURE = 5,
  PM_STATUS_STATISTICS = 6,
  PM_STATUS_EMPTY_SELECTION = 7,
  PM_STATUS_SHORTFALL = 8,
  PM_STATUS_CONFIG = 9,
  PM_STATUS_IO = 10,
  PM_STATUS_PANIC = 11,
} PmStatus;

/**
 * Conditional-variance estimators, mirroring the core enum.
 */
typedef enum PmEstimator {
  PM_ESTIMATOR_DIFF = 0,
  PM_ESTIMATOR_ONE_PULSE = 1,
  PM_ESTIMATOR_TWO_PULSE = 2,
  PM_ESTIMATOR_TWO_PULSE_NEAR_DEGENERATE = 3,
} PmEstimator;

/**
 * Opaque reconstructed phase-space density.
 */
typedef struct PmDensity PmDensity;

/**
 * Opaque experiment configuration.
 */
typedef struct PmExperiment PmExperiment;

/**
 * Derived scalars of an experiment.
 */
typedef struct PmDerived {
  double beta;
  double chi;
  /**
   * Thermal displacement SD in units of x_zpf.
   */
  double sigma_th;
  /**
   * Measurement imprecision `1 / chi` (x_zpf).
   */
  double sigma_m;
} PmDerived;

/**
 * First-angle summary of a noise-floor run.
 */
typedef struct PmNoiseFloor {
  double conditional_width;
  double nonconditional_width;
  double conditional_ratio;
  double nonconditional_ratio;
  double sigma_m;
} PmNoiseFloor;

/**
 * One mechanical mode as seen by the analytic variance.
 */
typedef struct PmModeTerm {
  /**
   * Mode frequency over the reference frequency.
   */
  double ratio;
  /**
   * Dephasing rate, in inverse units of `t`.
   */
  double gamma;
  /**
   * Quadrature variance (x_zpf^2).
   */
  double var_q;
} PmModeTerm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *pm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pm_version(void);

/**
 * Create an experiment from a built-in preset
 * (`thermal`, `tomography`, `common-mode`, `decoherence`, `noise-floor`).
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PmStatus pm_experiment_from_preset(const char *name, struct PmExperiment **out);

/**
 * Create an experiment from TOML text. The configuration is validated.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PmStatus pm_experiment_from_toml(const char *toml, struct PmExperiment **out);

/**
 * # Safety
 * `exp` must come from a `pm_experiment_from_*` call, or be null.
 */
void pm_experiment_free(struct PmExperiment *exp);

/**
 * Override seed and train count; zero `trains` keeps the configured value.
 *
 * # Safety
 * `exp` must be a live handle.
 */
enum PmStatus pm_experiment_set_run(struct PmExperiment *exp, uint64_t seed, size_t trains);

/**
 * Directory that commands write their CSV/JSON outputs to.
 *
 * # Safety
 * `exp` must be a live handle and `dir` a NUL-terminated string.
 */
enum PmStatus pm_experiment_set_output_dir(struct PmExperiment *exp, const char *dir);

/**
 * # Safety
 * `exp` must be a live handle and `out` a valid pointer.
 */
enum PmStatus pm_experiment_derived(const struct PmExperiment *exp, struct PmDerived *out);

/**
 * Run the noise-floor command (writes its outputs) and report the first angle.
 *
 * # Safety
 * `exp` must be a live handle and `out` a valid pointer.
 */
enum PmStatus pm_run_noise_floor(const struct PmExperiment *exp, struct PmNoiseFloor *out);

/**
 * Resonant response `H' = D / (D^2 + 1)` with `D = beta x_n`.
 */
double pm_homodyne_response(double x_n, double beta);

/**
 * Both roots `D` of the resonant response for a given `H'`.
 *
 * # Safety
 * `lower` and `upper` must be valid pointers.
 */
enum PmStatus pm_invert_response(double h_prime, double *lower, double *upper);

/**
 * Density of `H'` for a thermal state with detuning SD `sigma_delta`.
 */
double pm_thermal_pdf(double h_prime, double sigma_delta);

/**
 * Analytic variance of an estimator at angle `theta` after delay `t`.
 *
 * # Safety
 * `modes` must point to `n_modes` entries and `out` be valid.
 */
enum PmStatus pm_conditional_variance(enum PmEstimator estimator,
                                      double theta,
                                      double t,
                                      const struct PmModeTerm *modes,
                                      size_t n_modes,
                                      double *out);

/**
 * Bins on a symmetric projection axis of the given half width and step.
 */
size_t pm_axis_len(double half_width, double step);

/**
 * Filtered back-projection of binned marginals.
 *
 * `values` holds `n_angles` rows of `pm_axis_len(axis_half, step)` densities,
 * row-major. The grid spans `[-grid_half, grid_half]` in both quadratures
 * with the same step.
 *
 * # Safety
 * `angles` must hold `n_angles` values, `values` the full table, and `out`
 * must be valid.
 */
enum PmStatus pm_inverse_radon(const double *angles,
                               size_t n_angles,
                               const double *values,
                               double axis_half,
                               double step,
                               double grid_half,
                               struct PmDensity **out);

/**
 * Points per grid side; the density holds `n * n` values.
 *
 * # Safety
 * `d` must be a live handle or null.
 */
size_t pm_density_side(const struct PmDensity *d);

/**
 * Coordinate of grid index `k` along either quadrature.
 *
 * # Safety
 * `d` must be a live handle or null.
 */
double pm_density_point(const struct PmDensity *d, size_t k);

/**
 * Row-major values, `value[i * n + j]` at `(x_i, p_j)`. Borrowed from the handle.
 *
 * # Safety
 * `d` must be a live handle or null.
 */
const double *pm_density_values(const struct PmDensity *d);

/**
 * # Safety
 * `d` must come from [`pm_inverse_radon`], or be null.
 */
void pm_density_free(struct PmDensity *d);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PULSEMECH_H */
