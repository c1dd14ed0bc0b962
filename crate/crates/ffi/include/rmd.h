#ifndef RMD_H
#define RMD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RmdStatus {
  RMD_STATUS_OK = 0,
  RMD_STATUS_NULL_POINTER = 1,
  RMD_STATUS_INVALID_INPUT = 2,
  RMD_STATUS_UNDER_IDENTIFIED = 3,
  RMD_STATUS_EMPTY_SUBSET = 4,
  RMD_STATUS_DEGENERATE_MODEL = 5,
  RMD_STATUS_CONVERGENCE_FAILURE = 6,
  RMD_STATUS_ESTIMATION_FAILURE = 7,
  RMD_STATUS_FILTER_DEGENERACY = 8,
  RMD_STATUS_INVALID_STATE = 9,
  RMD_STATUS_EVALUATION_FAILURE = 10,
  RMD_STATUS_IO = 11,
  RMD_STATUS_BUFFER_TOO_SMALL = 12,
  RMD_STATUS_PANIC = 13,
} RmdStatus;

/**
 * Sequential RMD-N particle system.
 */
typedef struct RmdRmdn RmdRmdn;

/**
 * Aggregated RMD-X estimate.
 */
typedef struct RmdRmdx RmdRmdx;

/**
 * Quarterly time series.
 */
typedef struct RmdSeries RmdSeries;

/**
 * Scalar linear-Gaussian model
 * x_t = state_const + state_coef x_{t-1} + state_sd e_t, y_t = x_t + obs_sd u_t.
 */
typedef struct RmdModel {
  double state_const;
  double state_coef;
  double state_sd;
  double obs_sd;
  double init_mean;
  double init_var;
} RmdModel;

/**
 * Result of a weighted likelihood ratio test of model a against model b.
 */
typedef struct RmdWlr {
  double wlr_hat;
  double sigma_hat;
  double t_stat;
  /**
   * Standard normal CDF of `t_stat`.
   */
  double p_right;
} RmdWlr;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *rmd_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rmd_version(void);

/**
 * # Safety
 * `values` must point to `len` readable doubles; `out` must be writable.
 */
enum RmdStatus rmd_series_new(const double *values,
                              uintptr_t len,
                              int32_t start_year,
                              uint8_t start_quarter,
                              struct RmdSeries **out);

/**
 * Read a `date,value` CSV file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RmdStatus rmd_series_from_csv(const char *path, struct RmdSeries **out);

/**
 * # Safety
 * `series` must be a live handle or NULL.
 */
uintptr_t rmd_series_len(const struct RmdSeries *series);

/**
 * # Safety
 * `series` must come from `rmd_series_new`/`rmd_series_from_csv` or be NULL.
 */
void rmd_series_free(struct RmdSeries *series);

/**
 * Kalman filter with missing observations. `include` holds one byte per
 * observation (nonzero = observed) or is NULL for all observed. Filtered
 * means and variances are written to buffers of at least `len` doubles.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; output buffers may be NULL.
 */
enum RmdStatus rmd_kalman_filter(const struct RmdSeries *series,
                                 const struct RmdModel *model,
                                 const uint8_t *include,
                                 double *out_means,
                                 double *out_vars,
                                 double *out_loglik);

/**
 * Full-data maximum likelihood. `theta` receives the natural parameters;
 * `theta_len` their count.
 *
 * # Safety
 * `theta` must hold `theta_cap` doubles; other outputs may be NULL.
 */
enum RmdStatus rmd_mle_fit(const struct RmdSeries *series,
                           const char *family_tag,
                           double *theta,
                           uintptr_t theta_cap,
                           uintptr_t *theta_len,
                           double *loglik);

/**
 * RMD-X: fit `n_paths` random fixed-size inclusion paths and aggregate.
 *
 * # Safety
 * `series` must be a live handle; `out` must be writable.
 */
enum RmdStatus rmd_rmdx_estimate(const struct RmdSeries *series,
                                 const char *family_tag,
                                 double beta,
                                 uintptr_t n_paths,
                                 uintptr_t h_max,
                                 uint64_t seed,
                                 struct RmdRmdx **out);

/**
 * # Safety
 * `res` must be a live handle; `theta` must hold `cap` doubles.
 */
enum RmdStatus rmd_rmdx_theta(const struct RmdRmdx *res,
                              double *theta,
                              uintptr_t cap,
                              uintptr_t *len);

/**
 * Path-averaged filtered means, one per observation.
 *
 * # Safety
 * `res` must be a live handle; `out` must hold `cap` doubles.
 */
enum RmdStatus rmd_rmdx_filtered_means(const struct RmdRmdx *res, double *out, uintptr_t cap);

/**
 * Mean and variance of the path mixture forecast of the h-step average.
 *
 * # Safety
 * `res` must be a live handle; outputs must be writable.
 */
enum RmdStatus rmd_rmdx_forecast(const struct RmdRmdx *res, uintptr_t h, double *mean, double *var);

/**
 * # Safety
 * `res` must come from `rmd_rmdx_estimate` or be NULL.
 */
void rmd_rmdx_free(struct RmdRmdx *res);

/**
 * Create an RMD-N particle system for at most `horizon` observations.
 * `inner_cap` = 0 keeps every inner component.
 *
 * # Safety
 * `family_tag` must be a NUL-terminated string; `out` must be writable.
 */
enum RmdStatus rmd_rmdn_new(const char *family_tag,
                            double beta,
                            uintptr_t n_theta,
                            uintptr_t inner_cap,
                            uint64_t seed,
                            double init_mean,
                            uintptr_t horizon,
                            struct RmdRmdn **out);

/**
 * Assimilate one observation and rejuvenate if the effective sample size
 * has collapsed.
 *
 * # Safety
 * `sys` must be a live handle.
 */
enum RmdStatus rmd_rmdn_update(struct RmdRmdn *sys, double y);

/**
 * # Safety
 * `sys` must be a live handle or NULL.
 */
double rmd_rmdn_log_evidence(const struct RmdRmdn *sys);

/**
 * # Safety
 * `sys` must be a live handle or NULL.
 */
double rmd_rmdn_filtered_mean(const struct RmdRmdn *sys);

/**
 * Log one-step predictive density of `y`.
 *
 * # Safety
 * `sys` must be a live handle; `out` must be writable.
 */
enum RmdStatus rmd_rmdn_log_predictive(const struct RmdRmdn *sys, double y, double *out);

/**
 * Mean and variance of the h-step average forecast.
 *
 * # Safety
 * `sys` must be a live handle; outputs must be writable.
 */
enum RmdStatus rmd_rmdn_forecast(const struct RmdRmdn *sys, uintptr_t h, double *mean, double *var);

/**
 * Smoothed inclusion probabilities; only after all `horizon` observations.
 *
 * # Safety
 * `sys` must be a live handle; `out` must hold `cap` doubles.
 */
enum RmdStatus rmd_rmdn_smoothed_inclusion(const struct RmdRmdn *sys, double *out, uintptr_t cap);

/**
 * Weighted posterior quantiles, row-major `[param][prob]`.
 *
 * # Safety
 * `probs` must hold `n_probs` doubles and `out` `cap` doubles.
 */
enum RmdStatus rmd_rmdn_posterior_quantiles(const struct RmdRmdn *sys,
                                            const double *probs,
                                            uintptr_t n_probs,
                                            double *out,
                                            uintptr_t cap);

/**
 * # Safety
 * `sys` must come from `rmd_rmdn_new` or be NULL.
 */
void rmd_rmdn_free(struct RmdRmdn *sys);

/**
 * WLR test on paired log predictive densities.
 *
 * # Safety
 * `a` and `b` must hold `n` doubles; `out` must be writable.
 */
enum RmdStatus rmd_wlr_test(const double *a, const double *b, uintptr_t n, struct RmdWlr *out);

/**
 * Mean squared forecast error of paired forecasts and outcomes.
 *
 * # Safety
 * `forecasts` and `realized` must hold `n` doubles; `out` must be writable.
 */
enum RmdStatus rmd_msfe(const double *forecasts, const double *realized, uintptr_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RMD_H */
