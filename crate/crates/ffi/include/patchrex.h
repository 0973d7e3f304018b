/* SPDX-License-Identifier: MIT OR Apache-2.0 */

#ifndef PATCHREX_H
#define PATCHREX_H

/* Generated by cbindgen; do not edit. */

#include <stddef.h>
#include <stdint.h>

#define PRX_ABI_VERSION 1

typedef enum PrxStatus {
  PRX_STATUS_OK = 0,
  PRX_STATUS_NULL_POINTER = 1,
  PRX_STATUS_INVALID_ARGUMENT = 2,
  PRX_STATUS_DIMENSION_MISMATCH = 3,
  // A metric denominator vanished.
  PRX_STATUS_UNDEFINED_METRIC = 4,
  PRX_STATUS_NO_OBSERVED_VALUES = 5,
  PRX_STATUS_CHECKPOINT = 6,
  PRX_STATUS_IO = 7,
  PRX_STATUS_NUMERICAL = 8,
  // The output buffer is smaller than required.
  PRX_STATUS_BUFFER_TOO_SMALL = 9,
  PRX_STATUS_PANIC = 10,
  PRX_STATUS_INTERNAL = 11,
} PrxStatus;

// Opaque model handle.
typedef struct PrxModel PrxModel;

// Architecture summary of a model.
typedef struct PrxModelConfig {
  uint32_t m_in;
  uint32_t m_out;
  uint32_t d;
  uint32_t d_ff;
  uint32_t n_heads;
  uint32_t n_blocks;
  uint32_t n_quantiles;
} PrxModelConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// ABI version of this library.
uint32_t prx_abi_version(void);

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *prx_last_error(void);

// Static description of a status code.
const char *prx_status_str(enum PrxStatus status);

// Loads a `PRXW` checkpoint. On success `*out` owns a new handle that must
// be released with [`prx_model_free`].
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum PrxStatus prx_model_load(const char *path, struct PrxModel **out);

// Creates a randomly initialized model.
//
// # Safety
// `config` must point to a valid struct; `quantiles` to
// `config->n_quantiles` doubles; `out` must be writable.
enum PrxStatus prx_model_init(const struct PrxModelConfig *config,
                              const double *quantiles,
                              uint64_t seed,
                              struct PrxModel **out);

// Writes the model as a `PRXW` checkpoint.
//
// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
enum PrxStatus prx_model_save(const struct PrxModel *model, const char *path);

// Releases a handle. NULL is ignored.
//
// # Safety
// `model` must be NULL or a handle not yet freed.
void prx_model_free(struct PrxModel *model);

// # Safety
// `model` must be a live handle; `out` must be writable.
enum PrxStatus prx_model_config(const struct PrxModel *model, struct PrxModelConfig *out);

// Copies the quantile levels into `out` (capacity `cap`).
//
// # Safety
// `model` must be a live handle; `out` must hold `cap` doubles.
enum PrxStatus prx_model_quantiles(const struct PrxModel *model, double *out, uintptr_t cap);

// Number of learnable parameters, or 0 for a NULL handle.
//
// # Safety
// `model` must be NULL or a live handle.
uint64_t prx_model_parameter_count(const struct PrxModel *model);

// Quantile forecast of `horizon` steps. `observed` may be NULL (all
// observed); otherwise nonzero bytes mark observed steps. Writes
// `horizon × n_quantiles` doubles, row-major, nondecreasing per row.
//
// # Safety
// `values` (and `observed` when non-NULL) must hold `len` elements; `out`
// must hold `out_len` doubles.
enum PrxStatus prx_forecast(const struct PrxModel *model,
                            const double *values,
                            const uint8_t *observed,
                            uintptr_t len,
                            uintptr_t horizon,
                            double *out,
                            uintptr_t out_len);

// Seasonal-naive forecast of `horizon` steps from `context`.
//
// # Safety
// `context` must hold `len` doubles; `out` must hold `horizon` doubles.
enum PrxStatus prx_seasonal_naive(const double *context,
                                  uintptr_t len,
                                  uintptr_t season,
                                  uintptr_t horizon,
                                  double *out);

// Mean absolute scaled error of a point forecast.
//
// # Safety
// `forecast`/`actual` must hold `horizon` doubles, `context` `len` doubles;
// `out` must be writable.
enum PrxStatus prx_mase(const double *forecast_values,
                        const double *actual,
                        uintptr_t horizon,
                        const double *context,
                        uintptr_t len,
                        uintptr_t season,
                        double *out);

// Weighted quantile loss of `horizon × n_quantiles` row-major predictions.
//
// # Safety
// Pointers must hold the stated number of doubles; `out` must be writable.
enum PrxStatus prx_wql(const double *predictions,
                       const double *actual,
                       uintptr_t horizon,
                       const double *quantiles,
                       uintptr_t n_quantiles,
                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PATCHREX_H */
