#ifndef MCCLT_H
#define MCCLT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum McStatus {
  MC_STATUS_OK = 0,
  MC_STATUS_NULL_POINTER = 1,
  MC_STATUS_INVALID_ARGUMENT = 2,
  MC_STATUS_DIMENSION_MISMATCH = 3,
  MC_STATUS_CONFIG = 4,
  MC_STATUS_IO = 5,
  MC_STATUS_CHECKPOINT = 6,
  MC_STATUS_RUNTIME = 7,
  MC_STATUS_PANIC = 8,
} McStatus;

/**
 * Opaque Gaussian policy with its own sampling RNG.
 */
typedef struct McPolicy McPolicy;

/**
 * Opaque training session.
 */
typedef struct McTrainer McTrainer;

/**
 * Per-epoch summary; mirrors one `metrics.csv` row.
 */
typedef struct McEpochMetrics {
  uint64_t epoch;
  uint64_t env_steps;
  double ep_ret_mean;
  double ep_ret_min;
  double ep_ret_max;
  double ep_len_mean;
  double value_loss;
  double policy_loss;
  double mean_kl;
  double mean_w;
  double l_cur;
  double g_cur;
} McEpochMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null.
 */
const char *mcclt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mcclt_version(void);

/**
 * Standard-normal quantiles at `tau_i = (i+1)/(n+1)` written to `out[0..n]`.
 *
 * # Safety
 * `out` must point to `n` writable doubles.
 */
enum McStatus mcclt_z_grid(size_t n, double *out);

/**
 * Scheduled variance at step `t` given the mean episode length `l_cur`
 * and mean return `g_cur`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum McStatus mcclt_sigma_sq(double l_cur,
                             double g_cur,
                             double sigma_sq_min,
                             double t,
                             double *out);

/**
 * Squared gap between `n` bars and their fitted normal, and the resulting
 * weight `sigmoid(-E * temperature) + 0.5`. Either out-pointer may be null.
 *
 * # Safety
 * `bars` must point to `n` doubles.
 */
enum McStatus mcclt_uncertainty_weight(const double *bars,
                                       size_t n,
                                       double temperature,
                                       double *error_out,
                                       double *weight_out);

/**
 * Mean quantile Huber loss between `n` predicted and target bars.
 *
 * # Safety
 * `pred` and `target` must point to `n` doubles; `out` must be valid.
 */
enum McStatus mcclt_quantile_huber_loss(const double *pred,
                                        const double *target,
                                        size_t n,
                                        double kappa,
                                        double *out);

/**
 * Build a trainer from TOML configuration text.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum McStatus mcclt_trainer_new(const char *config_toml, struct McTrainer **out);

/**
 * Run one epoch of collection and updates. `metrics` may be null.
 *
 * # Safety
 * `trainer` must come from `mcclt_trainer_new`.
 */
enum McStatus mcclt_trainer_run_epoch(struct McTrainer *trainer, struct McEpochMetrics *metrics);

/**
 * Epochs completed so far.
 *
 * # Safety
 * `trainer` must come from `mcclt_trainer_new`; `out` must be valid.
 */
enum McStatus mcclt_trainer_epoch(const struct McTrainer *trainer, uint64_t *out);

/**
 * Copy the trainer's current policy into a new handle.
 *
 * # Safety
 * `trainer` must come from `mcclt_trainer_new`; `out` must be valid.
 */
enum McStatus mcclt_trainer_policy(const struct McTrainer *trainer,
                                   uint64_t seed,
                                   struct McPolicy **out);

/**
 * # Safety
 * `trainer` must come from `mcclt_trainer_new` (or be null) and not be used afterwards.
 */
void mcclt_trainer_free(struct McTrainer *trainer);

/**
 * Load a policy checkpoint. `seed` drives sampled actions.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum McStatus mcclt_policy_load(const char *path, uint64_t seed, struct McPolicy **out);

/**
 * Write a policy checkpoint.
 *
 * # Safety
 * `policy` must come from this library; `path` must be a NUL-terminated string.
 */
enum McStatus mcclt_policy_save(const struct McPolicy *policy, const char *path);

/**
 * Observation and action dimensions. Either out-pointer may be null.
 *
 * # Safety
 * `policy` must come from this library.
 */
enum McStatus mcclt_policy_dims(const struct McPolicy *policy, size_t *obs_dim, size_t *act_dim);

/**
 * Act in `state`: the mean action when `deterministic` is non-zero,
 * otherwise a sample from the policy's RNG.
 *
 * # Safety
 * `state` must point to `state_len` doubles and `action` to `action_len`
 * writable doubles.
 */
enum McStatus mcclt_policy_act(struct McPolicy *policy,
                               const double *state,
                               size_t state_len,
                               int32_t deterministic,
                               double *action,
                               size_t action_len);

/**
 * # Safety
 * `policy` must come from this library (or be null) and not be used afterwards.
 */
void mcclt_policy_free(struct McPolicy *policy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCCLT_H */
