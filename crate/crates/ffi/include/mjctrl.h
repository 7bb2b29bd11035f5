#ifndef MJCTRL_H
#define MJCTRL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MjctrlStatus {
  MJCTRL_STATUS_OK = 0,
  MJCTRL_STATUS_NULL_POINTER = 1,
  MJCTRL_STATUS_INVALID_UTF8 = 2,
  MJCTRL_STATUS_VALIDATION = 3,
  MJCTRL_STATUS_PARSE = 4,
  MJCTRL_STATUS_CAPACITY = 5,
  MJCTRL_STATUS_SINGULAR_COEFFICIENT = 6,
  MJCTRL_STATUS_UNSUPPORTED = 7,
  MJCTRL_STATUS_NUMERICAL = 8,
  MJCTRL_STATUS_BUFFER_TOO_SMALL = 9,
  MJCTRL_STATUS_IO = 10,
  MJCTRL_STATUS_PANIC = 11,
} MjctrlStatus;

/**
 * Opaque model handle.
 */
typedef struct MjctrlModel MjctrlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses a TOML model.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MjctrlStatus mjctrl_model_from_str(const char *toml, struct MjctrlModel **out);

/**
 * Loads a bundled model by name.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MjctrlStatus mjctrl_model_from_fixture(const char *name, struct MjctrlModel **out);

/**
 * # Safety
 * `model` must come from one of the constructors and not be freed twice. NULL is ignored.
 */
void mjctrl_model_free(struct MjctrlModel *model);

/**
 * State, control and trend dimensions and the horizon. Any output may be NULL.
 *
 * # Safety
 * `model` must be a live handle; non-NULL outputs must be writable.
 */
enum MjctrlStatus mjctrl_model_dims(const struct MjctrlModel *model,
                                    size_t *m,
                                    size_t *d,
                                    size_t *p,
                                    size_t *horizon);

/**
 * Limiting controllability metric P0 from the Riccati scheme.
 *
 * `p0` receives m·m values. `null_controllable` is 1, 0, or −1 when the
 * ε-trace did not stabilize.
 *
 * # Safety
 * `model` must be a live handle; `p0` must hold `len` doubles; other outputs may be NULL.
 */
enum MjctrlStatus mjctrl_metric(const struct MjctrlModel *model,
                                double *p0,
                                size_t len,
                                size_t *rank,
                                double *lambda_min,
                                int32_t *null_controllable);

/**
 * Path-space decisions. Any output may be NULL.
 *
 * # Safety
 * `model` must be a live handle; non-NULL outputs must be writable.
 */
enum MjctrlStatus mjctrl_oracle(const struct MjctrlModel *model,
                                bool *null_controllable,
                                bool *approx_controllable,
                                double *max_relative_residual);

/**
 * Squared controllability norm of `y0` (length m), computed exactly on the path tree.
 *
 * # Safety
 * `model` must be a live handle, `y0` must hold `len` doubles and `out` must be writable.
 */
enum MjctrlStatus mjctrl_ctrl_norm_sq(const struct MjctrlModel *model,
                                      const double *y0,
                                      size_t len,
                                      double *out);

/**
 * Noise-free Gramian p_0^N; `horizon` 0 means the model horizon.
 *
 * # Safety
 * `model` must be a live handle; `out` must hold `len` doubles; `rank` may be NULL.
 */
enum MjctrlStatus mjctrl_gramian(const struct MjctrlModel *model,
                                 size_t horizon,
                                 double *out,
                                 size_t len,
                                 size_t *rank);

/**
 * Full analysis report as JSON. Free the string with [`mjctrl_string_free`].
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum MjctrlStatus mjctrl_analyze_json(const struct MjctrlModel *model, char **out);

/**
 * # Safety
 * `s` must come from this library and not be freed twice. NULL is ignored.
 */
void mjctrl_string_free(char *s);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the next failing call.
 */
const char *mjctrl_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MJCTRL_H */
