/* C ABI for the asot anchor-space optimal transport library. */

#ifndef ASOT_H
#define ASOT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point. The numeric values
 * match the CLI exit codes for the same failure classes.
 */
typedef enum AsotStatus {
  /**
   * Success.
   */
  ASOT_STATUS_OK = 0,
  /**
   * A precondition on the inputs was violated.
   */
  ASOT_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Input data could not be parsed or read.
   */
  ASOT_STATUS_DATA_ERROR = 2,
  /**
   * The computation failed numerically.
   */
  ASOT_STATUS_NUMERIC_ERROR = 3,
  /**
   * A required pointer argument was NULL.
   */
  ASOT_STATUS_NULL_POINTER = 4,
  /**
   * An internal invariant was violated (a bug; the library state is
   * still consistent).
   */
  ASOT_STATUS_INTERNAL_ERROR = 5,
} AsotStatus;

/**
 * A learned anchor space: k anchor points with a shared metric.
 */
typedef struct AsotAnchorSpace AsotAnchorSpace;

/**
 * A discrete distribution: weighted points in d-dimensional space.
 */
typedef struct AsotDistribution AsotDistribution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Returns a pointer to the error message of the most recent failure on the
 * calling thread, or an empty string when no error occurred yet. The
 * pointer stays valid until the next failing call on the same thread; do
 * not free it.
 */
const char *asot_last_error_message(void);

/**
 * Returns the library version as a static string; do not free it.
 */
const char *asot_version(void);

/**
 * Creates a distribution from `n` points of dimension `d` (row-major).
 * `mass` may be NULL for uniform weights; otherwise it holds `n`
 * nonnegative weights which are normalized to sum to one. On success
 * writes a handle to `out`; free it with [`asot_distribution_free`].
 *
 * # Safety
 * `samples` must point to `n * d` readable doubles, `mass` to `n` readable
 * doubles when non-NULL, and `out` must be a valid writable pointer.
 */
enum AsotStatus asot_distribution_new(const double *samples,
                                      uintptr_t n,
                                      uintptr_t d,
                                      const double *mass,
                                      struct AsotDistribution **out);

/**
 * Releases a distribution handle; NULL is a no-op.
 *
 * # Safety
 * `dist` must be a handle from [`asot_distribution_new`] that has not been
 * freed yet.
 */
void asot_distribution_free(struct AsotDistribution *dist);

/**
 * Number of support points, or 0 for NULL.
 *
 * # Safety
 * `dist` must be a live distribution handle or NULL.
 */
uintptr_t asot_distribution_len(const struct AsotDistribution *dist);

/**
 * Point dimension, or 0 for NULL.
 *
 * # Safety
 * `dist` must be a live distribution handle or NULL.
 */
uintptr_t asot_distribution_dim(const struct AsotDistribution *dist);

/**
 * Exact 1-Wasserstein distance between two distributions under the
 * Euclidean ground cost, written to `out`.
 *
 * # Safety
 * `dx` and `dy` must be live distribution handles and `out` writable.
 */
enum AsotStatus asot_exact_distance(const struct AsotDistribution *dx,
                                    const struct AsotDistribution *dy,
                                    double *out);

/**
 * Entropic 1-Wasserstein distance via Sinkhorn iterations at the given
 * regularization strength, written to `out`.
 *
 * # Safety
 * `dx` and `dy` must be live distribution handles and `out` writable.
 */
enum AsotStatus asot_sinkhorn_distance(const struct AsotDistribution *dx,
                                       const struct AsotDistribution *dy,
                                       double epsilon,
                                       uintptr_t iterations,
                                       double *out);

/**
 * Creates an anchor space from `k` anchor points of dimension `d`
 * (row-major) with the Euclidean metric. Free with
 * [`asot_anchor_space_free`].
 *
 * # Safety
 * `anchors` must point to `k * d` readable doubles and `out` be writable.
 */
enum AsotStatus asot_anchor_space_new(const double *anchors,
                                      uintptr_t k,
                                      uintptr_t d,
                                      struct AsotAnchorSpace **out);

/**
 * Fits `k` anchors to `n` pooled samples of dimension `d` (row-major) with
 * seeded mini-batch k-means. Free the handle with
 * [`asot_anchor_space_free`].
 *
 * # Safety
 * `samples` must point to `n * d` readable doubles and `out` be writable.
 */
enum AsotStatus asot_anchor_space_fit_kmeans(const double *samples,
                                             uintptr_t n,
                                             uintptr_t d,
                                             uintptr_t k,
                                             uint64_t seed,
                                             struct AsotAnchorSpace **out);

/**
 * Releases an anchor-space handle; NULL is a no-op.
 *
 * # Safety
 * `space` must be a handle from an anchor-space constructor that has not
 * been freed yet.
 */
void asot_anchor_space_free(struct AsotAnchorSpace *space);

/**
 * Number of anchors, or 0 for NULL.
 *
 * # Safety
 * `space` must be a live anchor-space handle or NULL.
 */
uintptr_t asot_anchor_space_k(const struct AsotAnchorSpace *space);

/**
 * Anchor dimension, or 0 for NULL.
 *
 * # Safety
 * `space` must be a live anchor-space handle or NULL.
 */
uintptr_t asot_anchor_space_dim(const struct AsotAnchorSpace *space);

/**
 * Anchor-space 1-Wasserstein distance: both distributions are encoded onto
 * their nearest anchors and transported exactly under the shared anchor
 * cost. Written to `out`.
 *
 * # Safety
 * `space` must be a live anchor-space handle, `dx`/`dy` live distribution
 * handles whose dimension matches the space, and `out` writable.
 */
enum AsotStatus asot_anchor_distance(const struct AsotAnchorSpace *space,
                                     const struct AsotDistribution *dx,
                                     const struct AsotDistribution *dy,
                                     double *out);

/**
 * Entropic variant of [`asot_anchor_distance`] using Sinkhorn iterations on
 * the shared anchor cost.
 *
 * # Safety
 * Same as [`asot_anchor_distance`].
 */
enum AsotStatus asot_anchor_distance_entropic(const struct AsotAnchorSpace *space,
                                              const struct AsotDistribution *dx,
                                              const struct AsotDistribution *dy,
                                              double epsilon,
                                              uintptr_t iterations,
                                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASOT_H */
