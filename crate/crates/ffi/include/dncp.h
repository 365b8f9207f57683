#ifndef DNCP_H
#define DNCP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DncpParameterization {
  DNCP_PARAMETERIZATION_CP = 0,
  DNCP_PARAMETERIZATION_DNCP = 1,
  DNCP_PARAMETERIZATION_MIX = 2,
} DncpParameterization;

typedef enum DncpStatus {
  DNCP_STATUS_OK = 0,
  DNCP_STATUS_NULL_POINTER = 1,
  DNCP_STATUS_INVALID_ARGUMENT = 2,
  DNCP_STATUS_CONFIG = 3,
  DNCP_STATUS_MODEL = 4,
  DNCP_STATUS_NUMERIC = 5,
  DNCP_STATUS_IO = 6,
  DNCP_STATUS_BUFFER_TOO_SMALL = 7,
  DNCP_STATUS_PANIC = 8,
} DncpStatus;

/**
 * Draws and statistics of a finished chain.
 */
typedef struct DncpChain DncpChain;

/**
 * A model with fixed parameters and observations.
 */
typedef struct DncpModel DncpModel;

/**
 * Sampler settings; obtain defaults from [`dncp_hmc_config_default`].
 */
typedef struct DncpHmcConfig {
  size_t leapfrog_steps;
  double initial_step_size;
  double target_accept_rate;
  size_t burn_in;
  size_t samples;
  uint64_t seed;
  double mix_rho;
} DncpHmcConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *dncp_last_error(void);

struct DncpHmcConfig dncp_hmc_config_default(void);

/**
 * Parse a TOML model file (nodes, parameters, `theta` and `observed`
 * tables) into a new handle.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum DncpStatus dncp_model_from_toml(const char *toml, struct DncpModel **out);

/**
 * Two-step linear-Gaussian chain with observations `x[0]`, `x[1]`.
 *
 * # Safety
 * `x` must point to two doubles; `out` must be writable.
 */
enum DncpStatus dncp_model_lds(double sigma_x,
                               double sigma_z,
                               const double *x,
                               struct DncpModel **out);

/**
 * Release a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void dncp_model_free(struct DncpModel *model);

/**
 * Number of sampled latent coordinates.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DncpStatus dncp_model_num_latent_coords(const struct DncpModel *model, size_t *out);

/**
 * Squared parent-child posterior correlations of the local Gaussian
 * approximation under both parameterizations.
 *
 * # Safety
 * `rho2_cp` and `rho2_dncp` must be writable.
 */
enum DncpStatus dncp_squared_correlations(double alpha,
                                          double beta,
                                          double w,
                                          double sigma,
                                          double *rho2_cp,
                                          double *rho2_dncp);

/**
 * Writes 1 if the non-centered form has the smaller correlation, else 0.
 *
 * # Safety
 * `out` must be writable.
 */
enum DncpStatus dncp_prefer_dncp(double sigma, double beta, int32_t *out);

/**
 * Run a chain; `config` may be null for defaults.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum DncpStatus dncp_sample(const struct DncpModel *model,
                            enum DncpParameterization param,
                            const struct DncpHmcConfig *config,
                            struct DncpChain **out);

/**
 * Release a chain handle. Null is ignored.
 *
 * # Safety
 * `chain` must come from this library and not be used afterwards.
 */
void dncp_chain_free(struct DncpChain *chain);

/**
 * Number of kept draws and coordinates per draw.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DncpStatus dncp_chain_shape(const struct DncpChain *chain, size_t *samples, size_t *dim);

/**
 * Copy the draws, row-major (`samples × dim`), into `buf` of length `len`.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum DncpStatus dncp_chain_draws(const struct DncpChain *chain, double *buf, size_t len);

/**
 * Acceptance rate over the kept draws.
 *
 * # Safety
 * Pointers must be valid.
 */
enum DncpStatus dncp_chain_accept_rate(const struct DncpChain *chain, double *out);

/**
 * Effective sample size of a scalar series of length `n`.
 *
 * # Safety
 * `series` must hold `n` doubles; `out` must be writable.
 */
enum DncpStatus dncp_effective_sample_size(const double *series, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DNCP_H */
