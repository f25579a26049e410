#ifndef ECHOLAB_H
#define ECHOLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of all fallible functions.
 */
typedef enum EchoStatus {
  ECHO_STATUS_OK = 0,
  ECHO_STATUS_NULL_POINTER = 1,
  ECHO_STATUS_INVALID_ARGUMENT = 2,
  ECHO_STATUS_PARSE = 3,
  ECHO_STATUS_FORMAT = 4,
  ECHO_STATUS_SOLVER = 5,
  ECHO_STATUS_IO = 6,
  ECHO_STATUS_PANIC = 7,
} EchoStatus;

/**
 * Echo orientation: a column (source) or a row (drain) of the operator.
 */
typedef enum EchoDirection {
  ECHO_DIRECTION_SOURCE = 0,
  ECHO_DIRECTION_DRAIN = 1,
} EchoDirection;

/**
 * Low-rank factors of the echo matrix.
 */
typedef struct EchoFactors EchoFactors;

/**
 * A filtered image together with its state transition operator.
 */
typedef struct EchoFilter EchoFilter;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *echolab_last_error(void);

/**
 * Filters a row-major `nx × ny` image. `spec_json` uses the same JSON as the
 * command line and service, e.g. `{"method":"hd","time":10}`.
 *
 * # Safety
 * `data` must point to `nx * ny` doubles, `spec_json` to a NUL-terminated
 * string and `out` to writable storage for a handle.
 */
enum EchoStatus echolab_filter_new(const double *data,
                                   size_t nx,
                                   size_t ny,
                                   const char *spec_json,
                                   struct EchoFilter **out);

/**
 * Releases a filter handle. Null is ignored.
 *
 * # Safety
 * `filter` must come from [`echolab_filter_new`] and not be used afterwards.
 */
void echolab_filter_free(struct EchoFilter *filter);

/**
 * Number of pixels N, or 0 for a null handle.
 *
 * # Safety
 * `filter` must be null or a live handle.
 */
size_t echolab_filter_dim(const struct EchoFilter *filter);

/**
 * Copies the filtered image into `out` (length N).
 *
 * # Safety
 * `filter` must be a live handle and `out` must point to `len` doubles.
 */
enum EchoStatus echolab_filter_output(const struct EchoFilter *filter, double *out, size_t len);

/**
 * Applies the operator (`adjoint == 0`) or its transpose to `x`.
 *
 * # Safety
 * `filter` must be a live handle; `x` and `out` must point to `len` doubles.
 */
enum EchoStatus echolab_filter_apply(const struct EchoFilter *filter,
                                     const double *x,
                                     double *out,
                                     size_t len,
                                     int32_t adjoint);

/**
 * Exact echo of pixel `index` (row-major) written to `out` (length N).
 *
 * # Safety
 * `filter` must be a live handle and `out` must point to `len` doubles.
 */
enum EchoStatus echolab_filter_echo(const struct EchoFilter *filter,
                                    size_t index,
                                    enum EchoDirection direction,
                                    double *out,
                                    size_t len);

/**
 * Compresses all echoes of `filter`. `config_json` may be null for the
 * defaults; otherwise it uses the service JSON, e.g. `{"rank":20,"seed":1}`.
 *
 * # Safety
 * `filter` must be a live handle, `config_json` null or NUL-terminated, and
 * `out` writable storage for a handle.
 */
enum EchoStatus echolab_compress(const struct EchoFilter *filter,
                                 const char *config_json,
                                 struct EchoFactors **out);

/**
 * Reads a factor file written by [`echolab_factors_save`] or the CLI.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` writable storage for a handle.
 */
enum EchoStatus echolab_factors_load(const char *path, struct EchoFactors **out);

/**
 * Writes the factors to `path`.
 *
 * # Safety
 * `factors` must be a live handle and `path` NUL-terminated.
 */
enum EchoStatus echolab_factors_save(const struct EchoFactors *factors, const char *path);

/**
 * Releases a factor handle. Null is ignored.
 *
 * # Safety
 * `factors` must come from this library and not be used afterwards.
 */
void echolab_factors_free(struct EchoFactors *factors);

/**
 * Stored rank k, or 0 for a null handle.
 *
 * # Safety
 * `factors` must be null or a live handle.
 */
size_t echolab_factors_rank(const struct EchoFactors *factors);

/**
 * Length N of a reconstructed echo, or 0 for a null handle.
 *
 * # Safety
 * `factors` must be null or a live handle.
 */
size_t echolab_factors_dim(const struct EchoFactors *factors);

/**
 * Number of echoes stored as unit impulses, or 0 for a null handle.
 *
 * # Safety
 * `factors` must be null or a live handle.
 */
size_t echolab_factors_exclusions(const struct EchoFactors *factors);

/**
 * Copies the singular values into `out` (length k).
 *
 * # Safety
 * `factors` must be a live handle and `out` must point to `len` doubles.
 */
enum EchoStatus echolab_factors_sigma(const struct EchoFactors *factors, double *out, size_t len);

/**
 * Approximate echo of pixel `index` from the first `rank` factors
 * (0 means all of them), written to `out` (length N).
 *
 * # Safety
 * `factors` must be a live handle and `out` must point to `len` doubles.
 */
enum EchoStatus echolab_factors_echo(const struct EchoFactors *factors,
                                     size_t index,
                                     enum EchoDirection direction,
                                     size_t rank,
                                     double *out,
                                     size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECHOLAB_H */
