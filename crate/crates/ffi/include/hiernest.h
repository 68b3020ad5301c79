#ifndef HIERNEST_H
#define HIERNEST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Level at which a row was scored.
 */
typedef enum HnLevel {
  HN_LEVEL_OVERALL = 0,
  HN_LEVEL_MDC = 1,
  HN_LEVEL_DRG = 2,
} HnLevel;

/**
 * Penalty selector for `hn_fit`.
 */
typedef enum HnPenalty {
  HN_PENALTY_OGLASSO = 0,
  HN_PENALTY_LASSO = 1,
  HN_PENALTY_POOLED_LASSO = 2,
} HnPenalty;

/**
 * Result codes.
 */
typedef enum HnStatus {
  HN_STATUS_OK = 0,
  HN_STATUS_NULL_POINTER = 1,
  HN_STATUS_INVALID_UTF8 = 2,
  HN_STATUS_IO = 3,
  HN_STATUS_INVALID_MODEL = 4,
  HN_STATUS_INVALID_INPUT = 5,
  HN_STATUS_DIMENSION_MISMATCH = 6,
  HN_STATUS_NOT_CONVERGED = 7,
  HN_STATUS_PANIC = 8,
} HnStatus;

/**
 * Opaque fitted model.
 */
typedef struct HnModel HnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the calling thread's last failure (empty if none). Owned by the library.
 */
const char *hn_last_error(void);

/**
 * Library version string. Owned by the library.
 */
const char *hn_version(void);

/**
 * Reads a model JSON file into a new handle.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum HnStatus hn_model_load(const char *path, struct HnModel **out);

/**
 * Parses model JSON into a new handle.
 *
 * # Safety
 * `json` must be a valid C string and `out` a valid pointer.
 */
enum HnStatus hn_model_from_json(const char *json, struct HnModel **out);

/**
 * Writes the model as JSON to `path`.
 *
 * # Safety
 * `model` must come from this library; `path` must be a valid C string.
 */
enum HnStatus hn_model_save(const struct HnModel *model, const char *path);

/**
 * Model JSON as a new string; release it with `hn_string_free`.
 *
 * # Safety
 * `model` must come from this library and `out` be a valid pointer.
 */
enum HnStatus hn_model_to_json(const struct HnModel *model, char **out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or come from `hn_model_to_json`.
 */
void hn_string_free(char *s);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void hn_model_free(struct HnModel *model);

/**
 * Number of model features, intercept included.
 *
 * # Safety
 * `model` must be null or a handle from this library.
 */
uintptr_t hn_model_n_features(const struct HnModel *model);

/**
 * Penalty level of the model, NaN for a null handle.
 *
 * # Safety
 * `model` must be null or a handle from this library.
 */
double hn_model_lambda(const struct HnModel *model);

/**
 * Scores `n_rows` rows of a row-major `n_rows x n_cols` matrix whose columns
 * follow the model features (intercept column included, raw scale).
 *
 * `mdc` and `out_level` may be null. Unknown DRGs fall back to their MDC
 * (when `mdc` names a known one) or to the overall effects.
 *
 * # Safety
 * All non-null pointers must reference arrays of the stated lengths.
 */
enum HnStatus hn_model_predict(const struct HnModel *model,
                               const double *x,
                               uintptr_t n_rows,
                               uintptr_t n_cols,
                               const char *const *drg,
                               const char *const *mdc,
                               double *out_prob,
                               enum HnLevel *out_level);

/**
 * Fits a model at a fixed `lambda`.
 *
 * `x` is row-major `n_rows x n_cols` without an intercept column (one is
 * prepended; features are named `x1..x<n_cols>`). `y` holds 0/1 outcomes and
 * `drg` each row's DRG. The hierarchy is given as `n_pairs` (DRG, MDC) pairs.
 * `alpha1` and `alpha2` are ignored unless `penalty` is `Oglasso`. Returns
 * `NotConverged` (with the model still written to `out`) when the solver hit
 * its sweep cap.
 *
 * # Safety
 * All pointers must reference arrays of the stated lengths.
 */
enum HnStatus hn_fit(const double *x,
                     uintptr_t n_rows,
                     uintptr_t n_cols,
                     const double *y,
                     const char *const *drg,
                     const char *const *pair_drg,
                     const char *const *pair_mdc,
                     uintptr_t n_pairs,
                     enum HnPenalty penalty,
                     double alpha1,
                     double alpha2,
                     double lambda,
                     struct HnModel **out);

/**
 * AUROC of `scores` against 0/1 `labels`.
 *
 * # Safety
 * `scores` and `labels` must hold `n` values; `out` must be valid.
 */
enum HnStatus hn_auroc(const double *scores, const double *labels, uintptr_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HIERNEST_H */
