#ifndef LORA_CURVE_H
#define LORA_CURVE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LcStatus {
  LC_STATUS_OK = 0,
  LC_STATUS_NULL_POINTER = 1,
  // Bad argument: wrong size, out-of-range value or invalid UTF-8.
  LC_STATUS_INVALID_ARGUMENT = 2,
  // A length given by the caller does not match the data.
  LC_STATUS_DIMENSION_MISMATCH = 3,
  LC_STATUS_MISSING_FILE = 4,
  // Unreadable or inconsistent checkpoint.
  LC_STATUS_FORMAT = 5,
  LC_STATUS_IO = 6,
  LC_STATUS_NON_FINITE = 7,
  // A Rust panic was caught at the boundary.
  LC_STATUS_INTERNAL = 8,
} LcStatus;

// A trained curve with the network it was trained on.
typedef struct LcCurve LcCurve;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into this library on the same thread.
const char *lc_last_error(void);

// Load a checkpoint (and its JSON sidecar) into a new handle.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum LcStatus lc_curve_load(const char *path, struct LcCurve **out);

// Release a handle; null is ignored.
//
// # Safety
// `curve` must come from [`lc_curve_load`] and not be used afterwards.
void lc_curve_free(struct LcCurve *curve);

// Adapter dimension `D`, or 0 for a null handle.
//
// # Safety
// `curve` must be null or a live handle.
size_t lc_curve_dim(const struct LcCurve *curve);

// Number of segments; `t` ranges over `[0, segments]`.
//
// # Safety
// `curve` must be null or a live handle.
size_t lc_curve_num_segments(const struct LcCurve *curve);

// Input width for dense networks, sequence length for token networks.
//
// # Safety
// `curve` must be null or a live handle.
size_t lc_curve_input_dim(const struct LcCurve *curve);

// # Safety
// `curve` must be null or a live handle.
size_t lc_curve_num_classes(const struct LcCurve *curve);

// Adapter vector at `t`, written to `out[0..len]` with `len == D`.
//
// # Safety
// `out` must hold `len` doubles.
enum LcStatus lc_curve_eval(const struct LcCurve *curve, double t, double *out, size_t len);

// Class probabilities at `t` for `n` inputs of width `d` (token networks
// take integer-valued ids). `out` receives `n x C` values.
//
// # Safety
// `x` must hold `n * d` doubles and `out` `out_len` doubles.
enum LcStatus lc_curve_predict(const struct LcCurve *curve,
                               double t,
                               const double *x,
                               size_t n,
                               size_t d,
                               double *out,
                               size_t out_len);

// Grid-averaged prediction over `grid_m` equispaced points (0 selects
// `2 N_cp - 1`) with uniform weights. Optionally writes the per-example
// mutual information to `mi_out` (`n` values; may be null).
//
// # Safety
// Buffers must hold the stated number of doubles.
enum LcStatus lc_curve_bma_predict(const struct LcCurve *curve,
                                   size_t grid_m,
                                   const double *x,
                                   size_t n,
                                   size_t d,
                                   double *out,
                                   size_t out_len,
                                   double *mi_out);

// Bernstein basis polynomial `b_{i,degree}(t)` for `t` in `[0, 1]`.
//
// # Safety
// `out` must be a valid pointer.
enum LcStatus lc_bernstein(size_t i, size_t degree, double t, double *out);

// Grid weights from per-point data log-likelihoods; pass `INFINITY` for
// uniform weights.
//
// # Safety
// `log_likelihoods` and `out` must hold `m` doubles.
enum LcStatus lc_temperature_weights(const double *log_likelihoods,
                                     size_t m,
                                     double temperature_value,
                                     double *out);

// Mutual information of `m` predictive tables of shape `n x c` (stacked
// grid-point-major in `probs`) under `weights`. Writes the mean to
// `mean_out` and, when non-null, `n` per-example values to `per_example`.
//
// # Safety
// `probs` must hold `m * n * c` doubles, `weights` `m`.
enum LcStatus lc_mutual_information(const double *probs,
                                    size_t m,
                                    size_t n,
                                    size_t c,
                                    const double *weights,
                                    double *mean_out,
                                    double *per_example);

// Expected calibration error of `n x c` probabilities against `labels`
// using `bins` equal-width confidence bins.
//
// # Safety
// `probs` must hold `n * c` doubles and `labels` `n` entries.
enum LcStatus lc_expected_calibration_error(const double *probs,
                                            size_t n,
                                            size_t c,
                                            const uint32_t *labels,
                                            size_t bins,
                                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LORA_CURVE_H */
