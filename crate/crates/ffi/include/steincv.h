/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef STEINCV_H
#define STEINCV_H

#include <stddef.h>
#include <stdint.h>

// Result of every call. Zero is success.
typedef enum SteincvStatus {
  STEINCV_STATUS_OK = 0,
  STEINCV_STATUS_NULL_POINTER = 1,
  STEINCV_STATUS_SHAPE = 2,
  STEINCV_STATUS_TOO_FEW_SAMPLES = 3,
  STEINCV_STATUS_UNIDENTIFIABLE = 4,
  STEINCV_STATUS_SINGULAR = 5,
  STEINCV_STATUS_NON_CONVERGENCE = 6,
  STEINCV_STATUS_INVALID_ARGUMENT = 7,
  STEINCV_STATUS_NON_FINITE = 8,
  STEINCV_STATUS_NOT_POSITIVE_DEFINITE = 9,
  STEINCV_STATUS_PARSE = 10,
  STEINCV_STATUS_OVERFLOW = 11,
  STEINCV_STATUS_IO = 12,
  STEINCV_STATUS_PANIC = 13,
} SteincvStatus;

typedef enum SteincvPenalty {
  STEINCV_PENALTY_RIDGE = 0,
  STEINCV_PENALTY_LASSO = 1,
} SteincvPenalty;

typedef enum SteincvPreset {
  // Semi-exact columns, all rows, uniform weights.
  STEINCV_PRESET_SA = 0,
  // Semi-exact columns, row subsampling, uniform weights.
  STEINCV_PRESET_DO = 1,
  // Semi-exact columns, all rows, inverse residual variance weights.
  STEINCV_PRESET_MO = 2,
  STEINCV_PRESET_CUSTOM = 3,
} SteincvPreset;

typedef enum SteincvSelection {
  STEINCV_SELECTION_SRSWOR = 0,
  STEINCV_SELECTION_SEMI_EXACT = 1,
} SteincvSelection;

typedef enum SteincvWeights {
  STEINCV_WEIGHTS_UNIFORM = 0,
  STEINCV_WEIGHTS_INVERSE_RESIDUAL_VARIANCE = 1,
} SteincvWeights;

// A fitted ensemble together with the design and integrands it was fitted on.
typedef struct SteincvEnsemble SteincvEnsemble;

// Samples and their log-density gradients.
typedef struct SteincvSamples SteincvSamples;

// Ensemble settings. Zero `q_base` or `j_star` picks the default.
typedef struct SteincvEnsembleConfig {
  enum SteincvPreset preset;
  size_t learners;
  uint32_t q_max;
  uint32_t q_base;
  size_t j_star;
  double row_fraction;
  enum SteincvSelection selection;
  enum SteincvWeights weights;
  uint64_t seed;
} SteincvEnsembleConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *steincv_version(void);

// Message for the last failed call on this thread, or NULL after a success.
//
// The pointer stays valid until the next steincv call on the same thread.
const char *steincv_last_error_message(void);

// Number of control-variate columns for `dim` variables up to total order `order`.
//
// # Safety
// `out` must point to a writable `size_t`.
enum SteincvStatus steincv_basis_size(size_t dim, uint32_t order, size_t *out);

// Copies `n × dim` row-major samples and gradients into a new handle.
//
// # Safety
// `thetas` and `grads` must each point to `n * dim` doubles.
enum SteincvStatus steincv_samples_new(const double *thetas,
                                       const double *grads,
                                       size_t n,
                                       size_t dim,
                                       struct SteincvSamples **out);

// # Safety
// `samples` must come from [`steincv_samples_new`] and not be used afterwards. NULL is ignored.
void steincv_samples_free(struct SteincvSamples *samples);

// # Safety
// `samples` must be a live handle or NULL.
enum SteincvStatus steincv_samples_shape(const struct SteincvSamples *samples,
                                         size_t *n,
                                         size_t *dim);

// Plain Monte Carlo: column means of the `n × t` row-major integrand matrix into `out[t]`.
//
// # Safety
// `f` must point to `n * t` doubles and `out` to `t` writable doubles.
enum SteincvStatus steincv_mc(const double *f, size_t n, size_t t, double *out);

// Zero-variance control variates of total order `order`.
//
// `f` is `n × t` row-major with `n` the number of samples; `out` receives `t` estimates.
//
// # Safety
// `samples` must be a live handle, `f` must point to `n * t` doubles and `out` to `t` doubles.
enum SteincvStatus steincv_zvcv(const struct SteincvSamples *samples,
                                const double *f,
                                size_t t,
                                uint32_t order,
                                double *out);

// Ridge or LASSO regularised control variates.
//
// With `folds == 0` every integrand uses `lambda`; otherwise the penalty is chosen per
// integrand by `folds`-fold cross-validation seeded by `seed` and `lambda` is ignored.
// `lambdas_out` may be NULL; if not, it receives the `t` penalties used.
//
// # Safety
// Pointers as for [`steincv_zvcv`]; `lambdas_out` is NULL or points to `t` doubles.
enum SteincvStatus steincv_zvcv_regularised(const struct SteincvSamples *samples,
                                            const double *f,
                                            size_t t,
                                            uint32_t order,
                                            enum SteincvPenalty penalty,
                                            double lambda,
                                            size_t folds,
                                            uint64_t seed,
                                            double *out,
                                            double *lambdas_out);

// Applies a method given in the command-line spec syntax, e.g. `zv:q=2` or `sa:k=25`.
//
// # Safety
// `method` must be a NUL-terminated string; other pointers as for [`steincv_zvcv`].
enum SteincvStatus steincv_estimate(const struct SteincvSamples *samples,
                                    const double *f,
                                    size_t t,
                                    const char *method,
                                    uint64_t seed,
                                    double *out);

// Default settings for a preset.
struct SteincvEnsembleConfig steincv_ensemble_config_default(enum SteincvPreset preset,
                                                             size_t learners,
                                                             uint64_t seed);

// Fits an ensemble of control-variate learners; the integrands are copied into the handle.
//
// # Safety
// `config` must point to a valid config; other pointers as for [`steincv_zvcv`].
enum SteincvStatus steincv_ensemble_fit(const struct SteincvSamples *samples,
                                        const double *f,
                                        size_t t,
                                        const struct SteincvEnsembleConfig *config,
                                        struct SteincvEnsemble **out);

// # Safety
// `model` must come from [`steincv_ensemble_fit`] and not be used afterwards. NULL is ignored.
void steincv_ensemble_free(struct SteincvEnsemble *model);

// Number of learners and of integrands in a fitted ensemble.
//
// # Safety
// `model` must be a live handle.
enum SteincvStatus steincv_ensemble_shape(const struct SteincvEnsemble *model,
                                          size_t *learners,
                                          size_t *integrands);

// Aggregated estimate per integrand into `out[t]`.
//
// # Safety
// `model` must be a live handle and `out` must hold as many doubles as there are integrands.
enum SteincvStatus steincv_ensemble_estimate(const struct SteincvEnsemble *model, double *out);

// Each learner's own estimate, row-major `learners × integrands`.
//
// # Safety
// `model` must be a live handle and `out` must hold `learners * integrands` doubles.
enum SteincvStatus steincv_ensemble_learner_estimates(const struct SteincvEnsemble *model,
                                                      double *out);

// Learner weights, row-major `learners × integrands`.
//
// # Safety
// As for [`steincv_ensemble_learner_estimates`].
enum SteincvStatus steincv_ensemble_weights(const struct SteincvEnsemble *model, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEINCV_H */
