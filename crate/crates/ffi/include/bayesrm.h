#ifndef BAYESRM_H
#define BAYESRM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define BAYESRM_PENALTY_NONE 0

#define BAYESRM_PENALTY_STD 1

#define BAYESRM_PENALTY_VAR 2

// Status codes returned by every entry point.
typedef enum BayesrmStatus {
  BAYESRM_STATUS_OK = 0,
  BAYESRM_STATUS_NULL_POINTER = 1,
  BAYESRM_STATUS_INVALID_UTF8 = 2,
  BAYESRM_STATUS_USAGE = 3,
  BAYESRM_STATUS_IO = 4,
  BAYESRM_STATUS_SCHEMA = 5,
  BAYESRM_STATUS_VERSION = 6,
  BAYESRM_STATUS_SHAPE = 7,
  BAYESRM_STATUS_NUMERICAL = 8,
  BAYESRM_STATUS_STALE_POSTERIOR = 9,
  BAYESRM_STATUS_UNKNOWN_EVALUATOR = 10,
  BAYESRM_STATUS_EXCEEDS_POOL = 11,
  BAYESRM_STATUS_BUFFER_TOO_SMALL = 12,
  BAYESRM_STATUS_PANIC = 13,
} BayesrmStatus;

// Reward network loaded from a checkpoint.
typedef struct BayesrmModel BayesrmModel;

// Laplace posterior loaded from a posterior document.
typedef struct BayesrmPosterior BayesrmPosterior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or an empty string. The
// pointer stays valid until the next failing call on the same thread.
const char *bayesrm_last_error(void);

// Version of the on-disk document formats this library reads and writes.
uint32_t bayesrm_format_version(void);

// Loads a model checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum BayesrmStatus bayesrm_model_load(const char *path, struct BayesrmModel **out);

// Parses a model checkpoint from a JSON string.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum BayesrmStatus bayesrm_model_from_json(const char *json, struct BayesrmModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from a model constructor and not be used afterwards.
void bayesrm_model_free(struct BayesrmModel *model);

// # Safety
// `model` must be a live handle; `out` must be writable.
enum BayesrmStatus bayesrm_model_input_dim(const struct BayesrmModel *model, size_t *out);

// Number of trainable parameters.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum BayesrmStatus bayesrm_model_param_count(const struct BayesrmModel *model, size_t *out);

// Scalar reward of one feature vector.
//
// # Safety
// `x` must point to `len` doubles; `out` must be writable.
enum BayesrmStatus bayesrm_model_forward(const struct BayesrmModel *model,
                                         const double *x,
                                         size_t len,
                                         double *out);

// Loads a posterior document.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum BayesrmStatus bayesrm_posterior_load(const char *path, struct BayesrmPosterior **out);

// Parses a posterior document from a JSON string.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum BayesrmStatus bayesrm_posterior_from_json(const char *json, struct BayesrmPosterior **out);

// Releases a posterior. Null is ignored.
//
// # Safety
// `posterior` must come from a posterior constructor and not be used
// afterwards.
void bayesrm_posterior_free(struct BayesrmPosterior *posterior);

// Linearized predictive mean and variance. Fails with
// `STALE_POSTERIOR` unless the model's parameters are exactly the
// posterior's MAP estimate.
//
// # Safety
// Handles must be live; `x` must point to `len` doubles; `mean` and
// `variance` must be writable.
enum BayesrmStatus bayesrm_predictive_reward(const struct BayesrmPosterior *posterior,
                                             const struct BayesrmModel *model,
                                             const double *x,
                                             size_t len,
                                             double *mean,
                                             double *variance);

// `mean − k·√variance` (std) or `mean − k·variance` (var).
//
// # Safety
// `out` must be writable.
enum BayesrmStatus bayesrm_penalized_reward(double mean,
                                            double variance,
                                            int32_t kind,
                                            double k,
                                            double *out);

// Penalized reward of the fused ensemble Gaussian.
//
// # Safety
// `means` and `variances` must each point to `count` doubles; `out` must
// be writable.
enum BayesrmStatus bayesrm_ensemble_penalized_reward(const double *means,
                                                     const double *variances,
                                                     size_t count,
                                                     int32_t kind,
                                                     double k,
                                                     double *out);

// `ln n − (n − 1)/n`.
//
// # Safety
// `out` must be writable.
enum BayesrmStatus bayesrm_kl_bon(size_t n, double *out);

// Writes the `pool_size` best-of-n rank weights (ascending rank order)
// into `out`, which must hold at least `pool_size` doubles.
//
// # Safety
// `out` must point to `out_len` writable doubles.
enum BayesrmStatus bayesrm_bon_weights(size_t pool_size, size_t n, double *out, size_t out_len);

// Exact expected `eval` score of the best-of-n response under `ranking`,
// over all size-`n` subsets of one prompt's pool.
//
// # Safety
// `ranking` and `eval` must each point to `len` doubles; `out` must be
// writable.
enum BayesrmStatus bayesrm_bon_expected_reward(const double *ranking,
                                               const double *eval,
                                               size_t len,
                                               size_t n,
                                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BAYESRM_H */
