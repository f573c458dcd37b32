#ifndef GAUSSON_H
#define GAUSSON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GaussonFamily {
  GAUSSON_FAMILY_CONSTANT = 0,
  GAUSSON_FAMILY_QUADRATIC_WELL = 1,
  GAUSSON_FAMILY_MULTI_WELL_POLYNOMIAL = 2,
  GAUSSON_FAMILY_GAUSSIAN_BUMPS = 3,
} GaussonFamily;

typedef enum GaussonStatus {
  GAUSSON_STATUS_OK = 0,
  GAUSSON_STATUS_NULL_POINTER = 1,
  GAUSSON_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The reduction or the outer solve failed.
   */
  GAUSSON_STATUS_CONSTRUCTION = 3,
  GAUSSON_STATUS_IO = 4,
  GAUSSON_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  GAUSSON_STATUS_INTERNAL = 6,
} GaussonStatus;

/**
 * A potential `V`.
 */
typedef struct GaussonModel GaussonModel;

/**
 * A constructed solution together with its certification outcome.
 */
typedef struct GaussonSolution GaussonSolution;

/**
 * Scalar diagnostics of a solution.
 */
typedef struct GaussonSummary {
  size_t k;
  bool certified;
  size_t outer_iterations;
  double max_multiplier;
  double phi_eps_norm;
  double phi_star_norm;
  /**
   * `|F_h(u)|_∞` of the discrete equation.
   */
  double residual_inf;
} GaussonSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated, truncated to
 * `len - 1` bytes) and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes of writes.
 */
size_t gausson_last_error(char *buf, size_t len);

/**
 * Static version string.
 */
const char *gausson_version(void);

/**
 * # Safety
 * `params` must point to `nparams` doubles; `out` must be a valid pointer.
 */
enum GaussonStatus gausson_model_new(enum GaussonFamily family,
                                     const double *params,
                                     size_t nparams,
                                     size_t dim,
                                     struct GaussonModel **out);

/**
 * # Safety
 * `model` must come from [`gausson_model_new`] and not be freed twice.
 */
void gausson_model_free(struct GaussonModel *model);

/**
 * # Safety
 * `x` must point to `dim` doubles; `out` must be valid.
 */
enum GaussonStatus gausson_model_value(const struct GaussonModel *model,
                                       const double *x,
                                       double *out);

/**
 * Constructs a `k`-peak solution concentrating at the given centres (`k * dim` doubles,
 * row-major), on the default grid for `eps`, and certifies it.
 *
 * # Safety
 * `centres` must point to `k * dim` doubles; `out` must be valid.
 */
enum GaussonStatus gausson_construct(const struct GaussonModel *model,
                                     double eps,
                                     const double *centres,
                                     size_t k,
                                     double delta,
                                     struct GaussonSolution **out);

/**
 * # Safety
 * `solution` must come from [`gausson_construct`] and not be freed twice.
 */
void gausson_solution_free(struct GaussonSolution *solution);

/**
 * Grid shape: dimension, points per axis, half-width of the box.
 *
 * # Safety
 * All pointers must be valid.
 */
enum GaussonStatus gausson_solution_grid(const struct GaussonSolution *solution,
                                         size_t *dim,
                                         size_t *n,
                                         double *half_width);

/**
 * Copies `u` (row-major, last axis fastest) into `buf`, which must hold `n^dim` doubles.
 *
 * # Safety
 * `buf` must be valid for `len` doubles.
 */
enum GaussonStatus gausson_solution_values(const struct GaussonSolution *solution,
                                           double *buf,
                                           size_t len);

/**
 * Copies the final peak centres `y_j` (`k * dim` doubles) into `buf`.
 *
 * # Safety
 * `buf` must be valid for `len` doubles.
 */
enum GaussonStatus gausson_solution_centres(const struct GaussonSolution *solution,
                                            double *buf,
                                            size_t len);

/**
 * # Safety
 * `out` must be valid.
 */
enum GaussonStatus gausson_solution_summary(const struct GaussonSolution *solution,
                                            struct GaussonSummary *out);

/**
 * Writes `u` as a binary field file.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string.
 */
enum GaussonStatus gausson_solution_write(const struct GaussonSolution *solution, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAUSSON_H */
