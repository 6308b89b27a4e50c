#ifndef ELK_H
#define ELK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ElkStatus {
  ELK_STATUS_OK = 0,
  ELK_STATUS_INVALID_ARGUMENT = 1,
  ELK_STATUS_DIMENSION = 2,
  ELK_STATUS_NOT_POSITIVE_DEFINITE = 3,
  ELK_STATUS_NUMERICAL = 4,
  ELK_STATUS_NOT_CONVERGED = 5,
  ELK_STATUS_NON_FINITE_OBJECTIVE = 6,
  ELK_STATUS_MALFORMED_ROW = 7,
  ELK_STATUS_PARSE = 8,
  ELK_STATUS_STUDY = 9,
  ELK_STATUS_IO = 10,
  ELK_STATUS_NULL_POINTER = 11,
  ELK_STATUS_BUFFER_TOO_SMALL = 12,
  ELK_STATUS_PANIC = 13,
} ElkStatus;

/**
 * A fitted model and the latent model rebuilt from it.
 */
typedef struct ElkFit ElkFit;

/**
 * Randomized central interval of a predictive on the grid {0, 1/N, …, 1}.
 */
typedef struct ElkFuzzyInterval {
  size_t n;
  size_t lower;
  size_t upper;
  double p_reject_lower;
  double p_reject_upper;
} ElkFuzzyInterval;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated, truncated to `cap`).
 * Returns the full message length in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t elk_last_error_message(char *buf, size_t cap);

/**
 * Fits a Gaussian-response model to `n` observations. `config_toml` holds the `[model]`,
 * `[priors]` and `[fit]` sections and `seed` of a run configuration, or is null for defaults.
 * The domain is the configured one or the bounding box of the locations.
 *
 * # Safety
 * `xs`, `ys` and `values` must each point to `n` doubles; `config_toml` must be null or a
 * NUL-terminated string; `out` must be a valid pointer.
 */
enum ElkStatus elk_fit_gaussian(const double *xs,
                                const double *ys,
                                const double *values,
                                size_t n,
                                const char *config_toml,
                                struct ElkFit **out);

/**
 * Restores a fit from its JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ElkStatus elk_fit_from_json(const char *json, struct ElkFit **out);

/**
 * Writes the fit's JSON document into `buf` (NUL-terminated). `needed` receives the document
 * length in bytes; if it does not fit, nothing is written and `BufferTooSmall` is returned.
 *
 * # Safety
 * `fit` must come from this library; `buf` must be null or hold `cap` bytes; `needed` valid.
 */
enum ElkStatus elk_fit_to_json(const struct ElkFit *fit, char *buf, size_t cap, size_t *needed);

/**
 * Releases a fit. Null is ignored.
 *
 * # Safety
 * `fit` must be null or come from this library and not be used afterwards.
 */
void elk_fit_free(struct ElkFit *fit);

/**
 * Posterior-mode spatial and nugget variances.
 *
 * # Safety
 * `fit` must come from this library; the output pointers must be valid.
 */
enum ElkStatus elk_fit_mode_variances(const struct ElkFit *fit, double *sigma2_s, double *sigma2_n);

/**
 * Posterior predictive summaries of Y at `n` points from `n_hyper × draws_per_hyper` draws.
 * Any summary pointer may be null to skip it.
 *
 * # Safety
 * `fit` must come from this library; `xs`, `ys` and every non-null output must hold `n` doubles.
 */
enum ElkStatus elk_predict(const struct ElkFit *fit,
                           const double *xs,
                           const double *ys,
                           size_t n,
                           size_t n_hyper,
                           size_t draws_per_hyper,
                           uint64_t seed,
                           double *mean,
                           double *sd,
                           double *q10,
                           double *q50,
                           double *q90);

/**
 * Closed-form CRPS of N(mu, sigma²) at y.
 *
 * # Safety
 * `out` must be valid.
 */
enum ElkStatus elk_crps_gaussian(double mu, double sigma, double y, double *out);

/**
 * Builds the fuzzy interval of a pmf over `n_points` = N + 1 grid values.
 *
 * # Safety
 * `pmf` must hold `n_points` doubles; `out` must be valid.
 */
enum ElkStatus elk_fuzzy_interval(const double *pmf,
                                  size_t n_points,
                                  double alpha,
                                  struct ElkFuzzyInterval *out);

/**
 * Fuzzy membership of an observed proportion.
 *
 * # Safety
 * `interval` and `out` must be valid.
 */
enum ElkStatus elk_fuzzy_coverage(const struct ElkFuzzyInterval *interval, double y, double *out);

/**
 * Width of a fuzzy interval.
 *
 * # Safety
 * `interval` and `out` must be valid.
 */
enum ElkStatus elk_fuzzy_width(const struct ElkFuzzyInterval *interval, double *out);

/**
 * Matérn ν = 1 correlation at distance `d` for effective range `rho`.
 */
double elk_matern1_corr(double d, double rho);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ELK_H */
