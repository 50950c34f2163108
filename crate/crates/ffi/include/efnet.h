/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef EFNET_H
#define EFNET_H

#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum EfnetStatus {
  EFNET_STATUS_OK = 0,
  EFNET_STATUS_NULL_POINTER = 1,
  EFNET_STATUS_SHAPE = 2,
  EFNET_STATUS_PARAMETER = 3,
  EFNET_STATUS_FORMAT = 4,
  EFNET_STATUS_VERSION = 5,
  EFNET_STATUS_CHECKPOINT = 6,
  EFNET_STATUS_IO = 7,
  EFNET_STATUS_INVALID_UTF8 = 8,
  EFNET_STATUS_PANIC = 9,
  EFNET_STATUS_OTHER = 10,
} EfnetStatus;

/**
 * Opaque network handle.
 */
typedef struct EfnetNetwork EfnetNetwork;

/**
 * Forward-pass operation tallies.
 */
typedef struct EfnetOpCounts {
  uint64_t mults;
  uint64_t adds;
  uint64_t signs;
  uint64_t compares;
  uint64_t abs_ops;
  uint64_t negations;
} EfnetOpCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *efnet_last_error_message(void);

/**
 * `out = Σ sign(x_i y_i)(|x_i| + |y_i|)`.
 *
 * # Safety
 * `x` and `y` must point to `len` values and `out` to one.
 */
enum EfnetStatus efnet_ef_dot(const double *x, const double *y, uintptr_t len, double *out);

/**
 * `out = x ◇ W` for row-major `W` of shape `d × m`.
 *
 * # Safety
 * `x` must hold `d` values, `w` `d * m` values and `out` room for `m`.
 */
enum EfnetStatus efnet_ef_matprod(const double *x,
                                  uintptr_t d,
                                  const double *w,
                                  uintptr_t m,
                                  double *out);

/**
 * Loads a checkpoint file into a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum EfnetStatus efnet_network_load(const char *path, struct EfnetNetwork **out);

/**
 * Writes the network as a checkpoint file.
 *
 * # Safety
 * `net` must be a live handle and `path` a NUL-terminated string.
 */
enum EfnetStatus efnet_network_save(const struct EfnetNetwork *net, const char *path);

/**
 * Builds the four-layer additive network computing `sign(yᵀx + bias)`.
 *
 * # Safety
 * `y` must hold `d` values and `out` be writable.
 */
enum EfnetStatus efnet_sign_network_new(const double *y,
                                        uintptr_t d,
                                        double bias,
                                        struct EfnetNetwork **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `net` must be null or a handle not yet freed.
 */
void efnet_network_free(struct EfnetNetwork *net);

/**
 * Input length, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
uintptr_t efnet_network_input_len(const struct EfnetNetwork *net);

/**
 * Output length, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
uintptr_t efnet_network_output_len(const struct EfnetNetwork *net);

/**
 * Runs a forward pass. `counts` may be null; otherwise it receives the
 * operation tallies of this pass.
 *
 * # Safety
 * `net` must be a live handle, `x` hold `x_len` values and `out` room for
 * `out_len` values.
 */
enum EfnetStatus efnet_network_predict(const struct EfnetNetwork *net,
                                       const double *x,
                                       uintptr_t x_len,
                                       double *out,
                                       uintptr_t out_len,
                                       struct EfnetOpCounts *counts);

/**
 * Number of trainable parameters, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
uintptr_t efnet_network_param_count(const struct EfnetNetwork *net);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EFNET_H */
