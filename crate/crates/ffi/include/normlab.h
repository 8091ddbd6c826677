#ifndef NORMLAB_H
#define NORMLAB_H

/* Generated by cbindgen from normlab-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Operator norm selector, matching the optimizer's layer-group
// assignments.
typedef enum NlNormKind {
  NL_NORM_KIND_ONE_TO_RMS = 0,
  NL_NORM_KIND_RMS_TO_RMS = 1,
  NL_NORM_KIND_RMS_TO_INF = 2,
} NlNormKind;

// Status code of a fallible call.
typedef enum NlStatus {
  NL_STATUS_OK = 0,
  NL_STATUS_NULL_POINTER = 1,
  NL_STATUS_INVALID_ARGUMENT = 2,
  NL_STATUS_NUMERIC_ERROR = 3,
} NlStatus;

// Opaque dense matrix handle.
typedef struct NlMatrix NlMatrix;

// Opaque single-parameter Scion optimizer handle (momentum buffer plus
// hyperparameters; the duality map follows the configured norm kind).
typedef struct NlScion NlScion;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message for this thread into `buf` (NUL
// terminated, truncated to `len`). Returns the full message length.
// # Safety
//
// `buf` must be NULL or valid for `len` writable bytes.
size_t nl_last_error_message(char *buf, size_t len);

// Allocates a `rows x cols` matrix, copying `rows*cols` doubles from
// `data` (row-major). NULL `data` zero-fills. Returns NULL on invalid
// dimensions.
// # Safety
//
// `data` must be NULL or valid for `rows*cols` reads.
struct NlMatrix *nl_matrix_new(size_t rows, size_t cols, const double *data);

// Frees a matrix created by this library. NULL is a no-op.
// # Safety
//
// `m` must be NULL or a pointer returned by `nl_matrix_new`/`nl_dual`/`nl_newton_schulz`, not yet freed.
void nl_matrix_free(struct NlMatrix *m);

// # Safety
//
// `m` must be NULL or a live matrix handle.
size_t nl_matrix_rows(const struct NlMatrix *m);

// # Safety
//
// `m` must be NULL or a live matrix handle.
size_t nl_matrix_cols(const struct NlMatrix *m);

// Copies the matrix contents (row-major) into `out`, which must hold
// `rows*cols` doubles.
// # Safety
//
// `m` must be a live handle; `out` must be valid for `len` writes.
enum NlStatus nl_matrix_copy_data(const struct NlMatrix *m, double *out, size_t len);

// `|x|_2 / sqrt(len)`.
// # Safety
//
// `x` must be valid for `len` reads; `out` for one write.
enum NlStatus nl_rms_vector_norm(const double *x, size_t len, double *out);

// The operator norm assigned by `kind` (1->RMS, RMS->RMS via power
// iteration, or RMS->inf).
// # Safety
//
// `w` must be a live handle; `out` valid for one write.
enum NlStatus nl_op_norm(enum NlNormKind kind, const struct NlMatrix *w, double *out);

// Largest singular value by power iteration.
// # Safety
//
// `w` must be a live handle; `out` valid for one write.
enum NlStatus nl_spectral_norm(const struct NlMatrix *w, double tol, size_t max_iter, double *out);

// Quintic Newton-Schulz orthogonalization with explicit coefficients.
// # Safety
//
// `g` must be a live handle; `out` valid for one pointer write. The returned handle must be freed with `nl_matrix_free`.
enum NlStatus nl_newton_schulz(const struct NlMatrix *g,
                               size_t n_iter,
                               double a,
                               double b,
                               double c,
                               double eps,
                               struct NlMatrix **out);

// Duality map of `g` under `kind` with default Newton-Schulz settings.
// The result has unit operator norm under `kind`.
// # Safety
//
// `g` must be a live handle; `out` valid for one pointer write. The returned handle must be freed with `nl_matrix_free`.
enum NlStatus nl_dual(enum NlNormKind kind,
                      const struct NlMatrix *g,
                      struct NlMatrix **out);

// Creates a single-parameter Scion stepper: update rule
// `W <- W - lr (dual(buffer) + weight_decay * W)` with interpolation
// momentum `buffer <- (1-mu) grad + mu buffer`.
// # Safety
//
// The returned handle must be freed with `nl_scion_free`.
struct NlScion *nl_scion_new(enum NlNormKind kind, double lr, double momentum, double weight_decay);

// # Safety
//
// `s` must be NULL or a handle from `nl_scion_new`, not yet freed.
void nl_scion_free(struct NlScion *s);

// One optimizer step, updating `param` in place from `grad`.
// # Safety
//
// `s`, `param`, `grad` must be live handles from this library.
enum NlStatus nl_scion_step(struct NlScion *s, struct NlMatrix *param, const struct NlMatrix *grad);

// Weighted quadratic fit of `ln loss` against `ln norm` with optional
// init-loss constraint; outputs the vertex in log2 units. `stderrs` may
// be NULL for equal weights. Fails when the parabola has no interior
// optimum.
// # Safety
//
// `norms`/`losses` (and `stderrs` when non-NULL) must be valid for `n` reads; the two out-pointers for one write each.
enum NlStatus nl_fit_loss_vs_norm(const double *norms,
                                  const double *losses,
                                  const double *stderrs,
                                  size_t n,
                                  double init_loss,
                                  bool constrain,
                                  size_t n_points,
                                  double *log2_norm_star,
                                  double *loss_star);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NORMLAB_H */
