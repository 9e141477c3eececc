/* C interface for the loadcast forecasting library. */

#ifndef LOADCAST_H
#define LOADCAST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Non-zero values mirror the CLI exit codes;
 * `LC_NULL_ARGUMENT` flags a null pointer before anything else runs.
 */
typedef enum LcStatus {
  LcOk = 0,
  LcConfigError = 1,
  LcDataError = 2,
  LcRuntimeError = 3,
  LcNullArgument = 4,
} LcStatus;

/**
 * Opaque forecasting model handle.
 */
typedef struct LcModel LcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *lc_last_error_message(void);

/**
 * Seed-initialized model on the built-in toy backbone with default
 * dimensions (512-step input, 96-step horizon, 3 channels).
 * Returns null on failure; see `lc_last_error_message`.
 */
struct LcModel *lc_model_new_toy(uint64_t seed);

/**
 * Load a model from a JSON checkpoint written by the CLI or library.
 * Returns null on failure; see `lc_last_error_message`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct LcModel *lc_model_load(const char *path);

/**
 * Release a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from `lc_model_new_toy` / `lc_model_load` and must not
 * be used afterwards.
 */
void lc_model_free(struct LcModel *model);

/**
 * Input window length (steps) expected by `lc_forecast`.
 *
 * # Safety
 * `model` must be a valid handle.
 */
uintptr_t lc_model_input_len(const struct LcModel *model);

/**
 * Forecast horizon length (steps) produced by `lc_forecast`.
 *
 * # Safety
 * `model` must be a valid handle.
 */
uintptr_t lc_model_horizon(const struct LcModel *model);

/**
 * Run one forecast. `input` is row-major (input_len x 3); `out` receives
 * row-major (horizon x 3) physical-unit values.
 *
 * # Safety
 * `input` must hold `input_len * 3` doubles and `out` must have room for
 * `lc_model_horizon(model) * 3` doubles.
 */
enum LcStatus lc_forecast(const struct LcModel *model,
                          const double *input,
                          uintptr_t input_len,
                          double *out);

/**
 * Additive seasonal-trend decomposition of one series. Each output buffer
 * receives `n` doubles; any of them may be null to skip that component.
 *
 * # Safety
 * `series` must hold `n` doubles; non-null outputs must have room for `n`.
 */
enum LcStatus lc_decompose(const double *series,
                           uintptr_t n,
                           uintptr_t period,
                           double *trend,
                           double *seasonal,
                           double *residual);

/**
 * Mean squared error over `n` paired values.
 *
 * # Safety
 * `y` and `yhat` must hold `n` doubles; `out` must be a valid pointer.
 */
enum LcStatus lc_mse(const double *y, const double *yhat, uintptr_t n, double *out);

/**
 * Mean absolute error over `n` paired values.
 *
 * # Safety
 * `y` and `yhat` must hold `n` doubles; `out` must be a valid pointer.
 */
enum LcStatus lc_mae(const double *y, const double *yhat, uintptr_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOADCAST_H */
