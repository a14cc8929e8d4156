/* C interface to the romcex toolkit. Generated; do not edit. */

#ifndef ROMCEX_H
#define ROMCEX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Kernel family selector for [`romcex_emulator_train`].
 */
typedef enum RomcexKernel {
  /**
   * exp(-r^2 / (2 l^2))
   */
  RomcexKernelSquaredExponential = 0,
  /**
   * exp(-r / l)
   */
  RomcexKernelExponential = 1,
} RomcexKernel;

/**
 * Result of every fallible call. Numeric values match the process exit
 * codes of the command-line tool for the shared classes.
 */
typedef enum RomcexStatus {
  /**
   * The call succeeded.
   */
  RomcexOk = 0,
  /**
   * Rejected input: bad dimensions, non-finite values, bad arguments.
   */
  RomcexInvalidInput = 2,
  /**
   * The computation failed numerically (not positive definite,
   * no convergence, degenerate data).
   */
  RomcexNumericalFailure = 3,
  /**
   * File or serialization failure.
   */
  RomcexIoFailure = 4,
  /**
   * A required pointer argument was null.
   */
  RomcexNullPointer = 5,
  /**
   * The call panicked; the handle may be poisoned and must only be
   * freed.
   */
  RomcexPanic = 6,
} RomcexStatus;

/**
 * Opaque truncated spectral expansion of a snapshot set.
 */
typedef struct RomcexBasis RomcexBasis;

/**
 * Opaque kriging emulator.
 */
typedef struct RomcexEmulator RomcexEmulator;

/**
 * Opaque joint state/observation ensemble.
 */
typedef struct RomcexEnsemble RomcexEnsemble;

/**
 * Opaque weighted snapshot collection.
 */
typedef struct RomcexSnapshots RomcexSnapshots;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread.
 *
 * The pointer stays valid until the next failing romcex call on the
 * same thread. Never free it.
 */
const char *romcex_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *romcex_version(void);

/**
 * Builds a snapshot set from `count` state columns of length
 * `state_dim` and matching parameter rows of length `param_dim`.
 *
 * `states` is column-major (`state_dim * count` doubles); `params` is
 * row-contiguous per sample (`param_dim * count` doubles, sample `k`
 * at `k * param_dim`). `weights` may be null for uniform weighting;
 * otherwise it holds `count` positive values summing to one.
 *
 * Returns null on failure; see [`romcex_last_error_message`].
 *
 * # Safety
 * `states` and `params` must point to readable arrays of the sizes
 * above, and `weights`, when non-null, to `count` readable doubles.
 */
struct RomcexSnapshots *romcex_snapshots_create(size_t state_dim,
                                                size_t param_dim,
                                                size_t count,
                                                const double *states,
                                                const double *params,
                                                const double *weights);

/**
 * Number of snapshots in the set, or 0 for a null handle.
 *
 * # Safety
 * `set` must be null or a live handle from [`romcex_snapshots_create`].
 */
size_t romcex_snapshots_count(const struct RomcexSnapshots *set);

/**
 * State dimension of the set, or 0 for a null handle.
 *
 * # Safety
 * `set` must be null or a live handle from [`romcex_snapshots_create`].
 */
size_t romcex_snapshots_state_dim(const struct RomcexSnapshots *set);

/**
 * Frees a snapshot handle. Null is ignored.
 *
 * # Safety
 * `set` must be null or an unfreed handle from
 * [`romcex_snapshots_create`]; it is invalid afterwards.
 */
void romcex_snapshots_free(struct RomcexSnapshots *set);

/**
 * Decomposes a snapshot set, keeping singular values above
 * `tol * largest` (pass 0 for every numerically nonzero one).
 *
 * Returns null on failure.
 *
 * # Safety
 * `set` must be a live handle from [`romcex_snapshots_create`].
 */
struct RomcexBasis *romcex_basis_create(const struct RomcexSnapshots *set, double tol);

/**
 * Number of retained modes, or 0 for a null handle.
 *
 * # Safety
 * `basis` must be null or a live handle from [`romcex_basis_create`].
 */
size_t romcex_basis_rank(const struct RomcexBasis *basis);

/**
 * Copies the singular values, descending, into `out`.
 *
 * `out_len` must be at least the basis rank.
 *
 * # Safety
 * `basis` must be a live handle and `out` writable for `out_len`
 * doubles.
 */
enum RomcexStatus romcex_basis_singular_values(const struct RomcexBasis *basis,
                                               double *out,
                                               size_t out_len);

/**
 * Reconstructs snapshot `sample_index` from the leading `rank` modes
 * into `out` (`out_len` must be at least the state dimension).
 *
 * # Safety
 * `basis` must be a live handle and `out` writable for `out_len`
 * doubles.
 */
enum RomcexStatus romcex_basis_reconstruct(const struct RomcexBasis *basis,
                                           size_t rank,
                                           size_t sample_index,
                                           double *out,
                                           size_t out_len);

/**
 * Weighted squared reconstruction error of the set at the given rank,
 * written to `out`.
 *
 * # Safety
 * `basis` and `set` must be live handles; `out` must be writable.
 */
enum RomcexStatus romcex_basis_energy_error(const struct RomcexBasis *basis,
                                            const struct RomcexSnapshots *set,
                                            size_t rank,
                                            double *out);

/**
 * Frees a basis handle. Null is ignored.
 *
 * # Safety
 * `basis` must be null or an unfreed handle from
 * [`romcex_basis_create`]; it is invalid afterwards.
 */
void romcex_basis_free(struct RomcexBasis *basis);

/**
 * Trains an emulator on `count` input/value pairs.
 *
 * `inputs` holds `count` points of `input_dim` doubles each,
 * contiguously; `values` holds `count` targets of `value_dim` doubles.
 * A `length_scale` of 0 or below defers to the median pairwise
 * distance of the training inputs. Returns null on failure.
 *
 * # Safety
 * `inputs` and `values` must point to readable arrays of
 * `count * input_dim` and `count * value_dim` doubles.
 */
struct RomcexEmulator *romcex_emulator_train(size_t input_dim,
                                             size_t value_dim,
                                             size_t count,
                                             const double *inputs,
                                             const double *values,
                                             enum RomcexKernel kernel,
                                             double length_scale,
                                             double amplitude);

/**
 * Predicts at one point, writing `value_dim` doubles to `out`.
 *
 * # Safety
 * `emulator` must be a live handle; `point` must hold `point_len`
 * readable doubles and `out` room for `out_len` doubles.
 */
enum RomcexStatus romcex_emulator_predict(const struct RomcexEmulator *emulator,
                                          const double *point,
                                          size_t point_len,
                                          double *out,
                                          size_t out_len);

/**
 * Frees an emulator handle. Null is ignored.
 *
 * # Safety
 * `emulator` must be null or an unfreed handle from
 * [`romcex_emulator_train`]; it is invalid afterwards.
 */
void romcex_emulator_free(struct RomcexEmulator *emulator);

/**
 * Builds an ensemble of `count` members from column-major state
 * (`state_dim * count`) and observation (`obs_dim * count`) arrays.
 *
 * Returns null on failure.
 *
 * # Safety
 * `x` and `z` must point to readable arrays of the sizes above.
 */
struct RomcexEnsemble *romcex_ensemble_create(size_t state_dim,
                                              size_t obs_dim,
                                              size_t count,
                                              const double *x,
                                              const double *z,
                                              uint64_t seed);

/**
 * Conditions the ensemble on an observation, writing the updated
 * members column-major (`state_dim * count` doubles) to `out`.
 *
 * # Safety
 * `ensemble` must be a live handle; `observation` must hold `obs_len`
 * readable doubles and `out` room for `out_len` doubles.
 */
enum RomcexStatus romcex_ensemble_filter_update(const struct RomcexEnsemble *ensemble,
                                                const double *observation,
                                                size_t obs_len,
                                                double *out,
                                                size_t out_len);

/**
 * Mean squared prediction error of the best polynomial fit of the
 * given total degree, written to `out`.
 *
 * # Safety
 * `ensemble` must be a live handle and `out` writable.
 */
enum RomcexStatus romcex_ensemble_polynomial_loss(const struct RomcexEnsemble *ensemble,
                                                  size_t degree,
                                                  double *out);

/**
 * Frees an ensemble handle. Null is ignored.
 *
 * # Safety
 * `ensemble` must be null or an unfreed handle from
 * [`romcex_ensemble_create`]; it is invalid afterwards.
 */
void romcex_ensemble_free(struct RomcexEnsemble *ensemble);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROMCEX_H */
