#ifndef GPMPC_H
#define GPMPC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every entry point.
typedef enum GpmpcStatus {
  GPMPC_STATUS_OK = 0,
  GPMPC_STATUS_NULL_POINTER = 1,
  GPMPC_STATUS_INVALID_ARGUMENT = 2,
  GPMPC_STATUS_CONFIG = 3,
  GPMPC_STATUS_DATA = 4,
  GPMPC_STATUS_IO = 5,
  GPMPC_STATUS_DOMAIN = 6,
  GPMPC_STATUS_SINGULAR_MODEL = 7,
  GPMPC_STATUS_TRAINING_FAILED = 8,
  GPMPC_STATUS_PANIC = 9,
} GpmpcStatus;

typedef enum GpmpcIntention {
  GPMPC_INTENTION_TURN_RIGHT = 0,
  GPMPC_INTENTION_TURN_LEFT = 1,
  GPMPC_INTENTION_STRAIGHT_ON = 2,
} GpmpcIntention;

// A trained scalar GP.
typedef struct GpmpcGp GpmpcGp;

// The three intention models.
typedef struct GpmpcModelSet GpmpcModelSet;

// Simulation settings.
typedef struct GpmpcSimConfig GpmpcSimConfig;

// Outcome of a closed-loop run.
typedef struct GpmpcRunSummary {
  size_t steps;
  size_t violation_steps;
  size_t fallback_steps;
  // Zero or one.
  uint8_t degraded;
  // NaN without a target.
  double min_margin;
  // NaN without a target.
  double min_certificate;
  double min_speed;
} GpmpcRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into the library on this thread.
const char *gpmpc_last_error(void);

// Library version as a static NUL-terminated string.
const char *gpmpc_version(void);

// Chebyshev tube multiplier for violation level `omega` in (0, 1).
enum GpmpcStatus gpmpc_chebyshev_multiplier(double omega, double *out_nu);

// Loads a GP saved as JSON.
enum GpmpcStatus gpmpc_gp_load(const char *path, struct GpmpcGp **out);

void gpmpc_gp_free(struct GpmpcGp *gp);

// Input dimension of the GP.
enum GpmpcStatus gpmpc_gp_dim(const struct GpmpcGp *gp, size_t *out_dim);

// Posterior mean and noise-inclusive variance at a deterministic input of `dim` values.
enum GpmpcStatus gpmpc_gp_predict(const struct GpmpcGp *gp,
                                  const double *x,
                                  size_t dim,
                                  double *out_mean,
                                  double *out_variance);

// Predictive moments at a Gaussian input with mean `mean[dim]` and row-major
// covariance `covariance[dim * dim]`.
enum GpmpcStatus gpmpc_gp_predict_uncertain(const struct GpmpcGp *gp,
                                            const double *mean,
                                            const double *covariance,
                                            size_t dim,
                                            double *out_mean,
                                            double *out_variance);

// Loads the `turn_right`, `turn_left` and `straight_on` archives under `dir`.
enum GpmpcStatus gpmpc_models_load(const char *dir, struct GpmpcModelSet **out);

void gpmpc_models_free(struct GpmpcModelSet *models);

// Propagates a Gaussian position `steps` steps through one intention model.
// Writes `steps + 1` means (`2` values each) and row-major covariances
// (`4` values each), starting with the input distribution.
enum GpmpcStatus gpmpc_models_rollout(const struct GpmpcModelSet *models,
                                      enum GpmpcIntention intention,
                                      const double *mean,
                                      const double *covariance,
                                      size_t steps,
                                      double *out_means,
                                      double *out_covariances);

// Default simulation settings.
enum GpmpcStatus gpmpc_config_new(struct GpmpcSimConfig **out);

// Settings from a TOML or JSON file layered over the defaults.
enum GpmpcStatus gpmpc_config_load(const char *path, struct GpmpcSimConfig **out);

// Applies one `dotted.key=value` assignment. The settings are unchanged on failure.
enum GpmpcStatus gpmpc_config_set(struct GpmpcSimConfig *config, const char *assignment);

void gpmpc_config_free(struct GpmpcSimConfig *config);

// Runs the built-in right-turn scenario with `seed`. When `out_dir` is not
// null the log, summary and plots are written there.
enum GpmpcStatus gpmpc_simulate_right_turn(const struct GpmpcModelSet *models,
                                           const struct GpmpcSimConfig *config,
                                           uint64_t seed,
                                           const char *out_dir,
                                           struct GpmpcRunSummary *out_summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GPMPC_H */
