#ifndef PRIME_H
#define PRIME_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PrimeLayout {
  PRIME_LAYOUT_AUTO = 0,
  PRIME_LAYOUT_VALID = 1,
  PRIME_LAYOUT_SAME = 2,
} PrimeLayout;

typedef enum PrimeStatus {
  PRIME_STATUS_OK = 0,
  PRIME_STATUS_NULL_POINTER = 1,
  PRIME_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Shapes of the inputs disagree with each other or with the buffer length.
   */
  PRIME_STATUS_DIMENSION = 3,
  /**
   * Ill-conditioned data, degenerate geometry or a diverged solver.
   */
  PRIME_STATUS_NUMERICAL = 4,
  PRIME_STATUS_IO = 5,
  PRIME_STATUS_FORMAT = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  PRIME_STATUS_INTERNAL = 7,
} PrimeStatus;

typedef enum PrimeMethod {
  PRIME_METHOD_PRIME = 0,
  PRIME_METHOD_VCA = 1,
  PRIME_METHOD_NMF = 2,
} PrimeMethod;

/**
 * A `bands x height x width` band-sequential cube.
 */
typedef struct PrimeCube PrimeCube;

/**
 * Endmembers (`bands x sources`) and abundances (`sources x pixels`).
 */
typedef struct PrimeUnmixing PrimeUnmixing;

/**
 * Solver settings. Obtain defaults from [`prime_options_default`].
 */
typedef struct PrimeOptions {
  size_t sources;
  uint64_t seed;
  size_t gamma;
  double p;
  double lambda;
  double alpha;
  size_t outer;
  size_t epochs_first;
  size_t epochs_rest;
  double lr;
  double eta;
  double r;
  bool hi;
  bool ss;
  bool cg;
  enum PrimeLayout layout;
  size_t nmf_iters;
  /**
   * Relative virtual-cube change that ends the iterations early; 0 disables.
   */
  double early_stop;
} PrimeOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *prime_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *prime_version(void);

struct PrimeOptions prime_options_default(size_t sources);

/**
 * Copies `bands * height * width` band-sequential values into a new cube.
 *
 * # Safety
 * `data` must point to `len` readable doubles and `out` must be writable.
 */
enum PrimeStatus prime_cube_new(size_t bands,
                                size_t height,
                                size_t width,
                                const double *data,
                                size_t len,
                                struct PrimeCube **out);

/**
 * Reads a cube written by the `prime` tool from `<base>.json` / `<base>.bin`.
 *
 * # Safety
 * `base` must be a NUL-terminated UTF-8 path and `out` must be writable.
 */
enum PrimeStatus prime_cube_read(const char *base, struct PrimeCube **out);

/**
 * # Safety
 * `cube` must be a live handle; the out pointers may be null.
 */
enum PrimeStatus prime_cube_dims(const struct PrimeCube *cube,
                                 size_t *bands,
                                 size_t *height,
                                 size_t *width);

/**
 * # Safety
 * `cube` must be null or a handle not yet freed.
 */
void prime_cube_free(struct PrimeCube *cube);

/**
 * Unmixes a multispectral cube. `options` may be null for
 * `prime_options_default(sources)`.
 *
 * # Safety
 * `cube` must be a live handle, `options` null or readable, `out` writable.
 */
enum PrimeStatus prime_unmix(const struct PrimeCube *cube,
                             enum PrimeMethod method,
                             size_t sources,
                             const struct PrimeOptions *options,
                             struct PrimeUnmixing **out);

/**
 * # Safety
 * `result` must be a live handle; the out pointers may be null.
 */
enum PrimeStatus prime_unmixing_dims(const struct PrimeUnmixing *result,
                                     size_t *bands,
                                     size_t *sources,
                                     size_t *pixels);

/**
 * Copies the `bands x sources` endmember matrix, row-major.
 *
 * # Safety
 * `result` must be a live handle and `out` must hold `len` doubles.
 */
enum PrimeStatus prime_unmixing_endmembers(const struct PrimeUnmixing *result,
                                           double *out,
                                           size_t len);

/**
 * Copies the `sources x pixels` abundance matrix, row-major.
 *
 * # Safety
 * `result` must be a live handle and `out` must hold `len` doubles.
 */
enum PrimeStatus prime_unmixing_abundances(const struct PrimeUnmixing *result,
                                           double *out,
                                           size_t len);

/**
 * # Safety
 * `result` must be null or a handle not yet freed.
 */
void prime_unmixing_free(struct PrimeUnmixing *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRIME_H */
