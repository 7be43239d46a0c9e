/*
 * C interface for the elscreen screening library.
 *
 * Generated by cbindgen from the elscreen-ffi crate; do not edit by hand.
 */

#ifndef ELSCREEN_H
#define ELSCREEN_H

#include <stddef.h>
#include <stdint.h>

// Screening statistic selector for [`els_screen_statistics`].
typedef enum ElsMethod {
  // Joint multivariate EL statistic across all responses.
  ELS_METHOD_MELSIS = 0,
  // Mean of the per-response univariate EL statistics.
  ELS_METHOD_ELSIS_AVG = 1,
  // Maximum of the per-response univariate EL statistics.
  ELS_METHOD_ELSIS_MAX = 2,
} ElsMethod;

// Status code returned by every fallible entry point.
typedef enum ElsStatus {
  // Success; output parameters are valid.
  ELS_OK = 0,
  // A required pointer argument was null.
  ELS_NULL_POINTER = 1,
  // Input failed a structural precondition (dimensions, finiteness,
  // index ranges).
  ELS_INVALID_INPUT = 2,
  // Zero lies outside the convex hull of the estimating rows, so the
  // empirical likelihood is undefined at zero.
  ELS_HULL_VIOLATION = 3,
  // An iterative computation broke down numerically.
  ELS_NUMERICAL_FAILURE = 4,
  // An internal panic was caught at the boundary.
  ELS_PANIC = 5,
} ElsStatus;

// Opaque dataset handle; create with [`els_dataset_new`], release with
// [`els_dataset_free`].
typedef struct ElsDataset ElsDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Creates a dataset from row-major predictor and response blocks.
//
// `x` holds `n * p` doubles (observation-major), `y` holds `n * q`
// doubles. The handle copies both blocks, so the buffers may be freed
// immediately after the call. Requires `n >= 3`, `p >= 1`, `q >= 1`,
// and finite entries.
//
// # Safety
// `x` and `y` must point to buffers of the stated sizes, and `out` must
// be a valid location for one pointer.
enum ElsStatus els_dataset_new(const double *x,
                               size_t n,
                               size_t p,
                               const double *y,
                               size_t q,
                               struct ElsDataset **out);

// Releases a dataset handle. A null handle is a no-op.
//
// # Safety
// `dataset` must be null or a pointer returned by [`els_dataset_new`]
// that has not been freed yet.
void els_dataset_free(struct ElsDataset *dataset);

// Number of observations in the dataset, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t els_dataset_n(const struct ElsDataset *dataset);

// Number of predictors in the dataset, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t els_dataset_p(const struct ElsDataset *dataset);

// Number of responses in the dataset, or 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t els_dataset_q(const struct ElsDataset *dataset);

// Computes marginal screening statistics for every predictor.
//
// Writes one statistic per predictor into `out_values` (length `p`,
// aligned with predictor indices). Predictors whose solve fails get the
// screening convention value 0. Larger is better; rank with
// [`els_rank_predictors`].
//
// # Safety
// `dataset` must be a live handle and `out_values` must point to `p`
// writable doubles.
enum ElsStatus els_screen_statistics(const struct ElsDataset *dataset,
                                     enum ElsMethod method,
                                     double *out_values);

// Computes conditional screening statistics given a conditioning set.
//
// `cond` lists 0-based predictor indices (strictly increasing after
// sorting, no duplicates, not covering every predictor). Writes one
// value per predictor into `out_values` (length `p`): conditioned
// predictors get NaN, targets get their conditional statistic, and
// targets whose centralization or solve failed get 0.
//
// # Safety
// `dataset` must be a live handle, `cond` must point to `cond_len`
// readable indices, and `out_values` must point to `p` writable doubles.
enum ElsStatus els_conditional_statistics(const struct ElsDataset *dataset,
                                          const size_t *cond,
                                          size_t cond_len,
                                          double *out_values);

// Orders predictor indices by decreasing statistic value.
//
// Ties break toward the smaller index. Values compare by the IEEE 754
// total order, descending, so a positive NaN sorts before every finite
// value; screening statistics themselves are always finite (failed
// solves yield 0). Writes `len` indices into `out_order`.
//
// # Safety
// `values` must point to `len` readable doubles and `out_order` to
// `len` writable `size_t`s.
enum ElsStatus els_rank_predictors(const double *values, size_t len, size_t *out_order);

// Model size of the hard threshold rule: round(c * floor(n / ln n)).
//
// The formula is applied verbatim; degenerate scale factors can yield
// zero. Returns 0 when `c` is not a positive finite number or `n < 2`.
size_t els_hard_threshold_size(size_t n, double c);

// Evaluates the adjusted empirical-likelihood ratio at zero for a
// row-major n x q estimating matrix.
//
// Writes the nonnegative statistic into `out_ratio`. Requires at least
// two rows, `q >= 1`, and finite entries.
//
// # Safety
// `g` must point to `n * q` readable doubles and `out_ratio` to one
// writable double.
enum ElsStatus els_el_ratio(const double *g, size_t n, size_t q, double *out_ratio);

// Copies the most recent error message of this thread into `buf`.
//
// Returns the full message length including the trailing NUL; the copy
// is truncated (but still NUL-terminated) when `len` is smaller.
// Returns 0 when no call on this thread has failed yet.
//
// # Safety
// `buf` must be null (to query the length) or point to `len` writable
// bytes.
size_t els_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *els_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ELSCREEN_H */
