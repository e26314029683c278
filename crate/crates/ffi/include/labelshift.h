#ifndef LABELSHIFT_H
#define LABELSHIFT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_INVALID_ARGUMENT = 1,
  LS_STATUS_NULL_POINTER = 2,
  LS_STATUS_SINGULAR_MATRIX = 3,
  LS_STATUS_NUMERICAL = 4,
  LS_STATUS_DEGENERATE_ROW = 5,
  LS_STATUS_UNSATISFIABLE_SHIFT = 6,
  LS_STATUS_PARSE = 7,
  LS_STATUS_IO = 8,
  LS_STATUS_PANIC = 9,
} LsStatus;

typedef enum LsFamily {
  LS_FAMILY_NONE = 0,
  LS_FAMILY_TS = 1,
  LS_FAMILY_NBVS = 2,
  LS_FAMILY_BCTS = 3,
  LS_FAMILY_VS = 4,
} LsFamily;

typedef enum LsSourcePriorMode {
  LS_SOURCE_PRIOR_MODE_MEAN_PREDICTION = 0,
  LS_SOURCE_PRIOR_MODE_LABEL_FREQUENCY = 1,
} LsSourcePriorMode;

typedef enum LsPredictionMode {
  LS_PREDICTION_MODE_HARD = 0,
  LS_PREDICTION_MODE_SOFT = 1,
} LsPredictionMode;

/**
 * Opaque calibration transform. Create with [`ls_calibration_fit`],
 * [`ls_calibration_new`] or [`ls_calibration_from_json`]; release with
 * [`ls_calibration_free`].
 */
typedef struct LsCalibration LsCalibration;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static description of a status code. Never null.
 */
const char *ls_status_message(enum LsStatus status);

/**
 * Message for the last failure on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *ls_last_error(void);

/**
 * Library version string. Never null.
 */
const char *ls_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ls_string_free(char *s);

/**
 * Fits `family` on `n` labelled rows of `m` logits. A non-positive
 * `grad_tol` or zero `max_iter` selects the default.
 *
 * # Safety
 * `logits` must hold `n * m` values and `labels` `n` values.
 */
enum LsStatus ls_calibration_fit(enum LsFamily family,
                                 const double *logits,
                                 const size_t *labels,
                                 size_t n,
                                 size_t m,
                                 double grad_tol,
                                 size_t max_iter,
                                 struct LsCalibration **out);

/**
 * Builds a transform from explicit parameters. `temperature` is read for
 * TS and BCTS, `scales` (length `m`) for NBVS and VS, `biases` (length
 * `m`) for BCTS and VS; unused pointers may be null.
 *
 * # Safety
 * Non-null `scales` and `biases` must hold `m` values.
 */
enum LsStatus ls_calibration_new(enum LsFamily family,
                                 double temperature,
                                 const double *scales,
                                 const double *biases,
                                 size_t m,
                                 struct LsCalibration **out);

/**
 * Parses parameters in the JSON form written by `ls_calibration_to_json`.
 *
 * # Safety
 * `json` must be a nul-terminated string.
 */
enum LsStatus ls_calibration_from_json(const char *json, struct LsCalibration **out);

/**
 * JSON form of the parameters. Free the result with [`ls_string_free`].
 *
 * # Safety
 * `handle` must be a live calibration handle.
 */
enum LsStatus ls_calibration_to_json(const struct LsCalibration *handle, char **out);

/**
 * # Safety
 * `handle` must be a live calibration handle.
 */
enum LsStatus ls_calibration_family(const struct LsCalibration *handle, enum LsFamily *out);

/**
 * Validation NLL reached by the fit; NaN for handles that were not fitted.
 *
 * # Safety
 * `handle` must be a live calibration handle.
 */
enum LsStatus ls_calibration_nll(const struct LsCalibration *handle, double *out);

/**
 * Calibrated probabilities for `n` rows of `m` logits, written to
 * `out_probs` (`n * m` values).
 *
 * # Safety
 * `handle` must be live; `logits` and `out_probs` must hold `n * m` values.
 */
enum LsStatus ls_calibration_apply(const struct LsCalibration *handle,
                                   const double *logits,
                                   size_t n,
                                   size_t m,
                                   double *out_probs);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `handle` must come from this library and not have been freed.
 */
void ls_calibration_free(struct LsCalibration *handle);

/**
 * Source priors from validation probabilities. `labels` is only read
 * (and then required) in label-frequency mode.
 *
 * # Safety
 * `valid_probs` must hold `n * m` values, non-null `labels` `n` values
 * and `out_priors` room for `m`.
 */
enum LsStatus ls_source_priors(enum LsSourcePriorMode mode,
                               const double *valid_probs,
                               const size_t *labels,
                               size_t n,
                               size_t m,
                               double *out_priors);

/**
 * EM estimate of the target priors and weights. A non-positive `tol` or
 * zero `max_iter` selects the default. `out_iterations` and
 * `out_converged` may be null.
 *
 * # Safety
 * `target_probs` must hold `n * m` values; `source_priors`, `out_priors`
 * and `out_weights` `m` values each.
 */
enum LsStatus ls_em_estimate(const double *target_probs,
                             size_t n,
                             size_t m,
                             const double *source_priors,
                             double tol,
                             size_t max_iter,
                             double *out_priors,
                             double *out_weights,
                             size_t *out_iterations,
                             bool *out_converged);

/**
 * Black-box shift weights from a validation confusion matrix.
 *
 * # Safety
 * `valid_probs` must hold `n_valid * m` values, `valid_labels` `n_valid`,
 * `target_probs` `n_target * m` and `out_weights` `m`.
 */
enum LsStatus ls_bbsl_estimate(enum LsPredictionMode mode,
                               const double *valid_probs,
                               const size_t *valid_labels,
                               size_t n_valid,
                               const double *target_probs,
                               size_t n_target,
                               size_t m,
                               double *out_weights);

/**
 * Regularized shift weights; arguments as [`ls_bbsl_estimate`] plus the
 * penalty `lambda >= 0` and step `delta` in `[0, 1]`.
 *
 * # Safety
 * As [`ls_bbsl_estimate`].
 */
enum LsStatus ls_rlls_estimate(enum LsPredictionMode mode,
                               const double *valid_probs,
                               const size_t *valid_labels,
                               size_t n_valid,
                               const double *target_probs,
                               size_t n_target,
                               size_t m,
                               double lambda,
                               double delta,
                               double *out_weights);

/**
 * Weights `q_i / p_i` from target and source priors.
 *
 * # Safety
 * `target_priors`, `source_priors` and `out_weights` must hold `m` values.
 */
enum LsStatus ls_weights_from_priors(const double *target_priors,
                                     const double *source_priors,
                                     size_t m,
                                     double *out_weights);

/**
 * Reweights each probability row by `weights` and renormalizes.
 *
 * # Safety
 * `probabilities` and `out_probs` must hold `n * m` values, `weights` `m`.
 */
enum LsStatus ls_adapt_predictions(const double *probabilities,
                                   size_t n,
                                   size_t m,
                                   const double *weights,
                                   double *out_probs);

/**
 * Runs an experiment from a JSON configuration and returns the records
 * and summary as JSON. Relative dataset paths resolve against the working
 * directory. Free the result with [`ls_string_free`].
 *
 * # Safety
 * `config_json` must be a nul-terminated string.
 */
enum LsStatus ls_run_experiment(const char *config_json, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LABELSHIFT_H */
