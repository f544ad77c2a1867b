#ifndef ADIADIO_H
#define ADIADIO_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum AdiadioStatus {
  ADIADIO_STATUS_OK = 0,
  ADIADIO_STATUS_NULL_POINTER = 1,
  ADIADIO_STATUS_INVALID_UTF8 = 2,
  ADIADIO_STATUS_PARSE = 3,
  ADIADIO_STATUS_INVALID_ARGUMENT = 4,
  ADIADIO_STATUS_NUMERICAL = 5,
  ADIADIO_STATUS_NORM_DRIFT = 6,
  ADIADIO_STATUS_BUFFER_TOO_SMALL = 7,
  ADIADIO_STATUS_PANIC = 8,
} AdiadioStatus;

/**
 * Outcome of a decision run; values match the command-line exit codes.
 */
typedef enum AdiadioVerdict {
  ADIADIO_VERDICT_HAS_SOLUTION = 0,
  ADIADIO_VERDICT_NO_SOLUTION = 1,
  ADIADIO_VERDICT_INCONCLUSIVE = 4,
} AdiadioVerdict;

/**
 * Parsed polynomial; opaque to C.
 */
typedef struct AdiadioPolynomial AdiadioPolynomial;

/**
 * Decision settings. Zero in `reference_cutoff` or `max_model_cutoff`
 * selects the library default.
 */
typedef struct AdiadioDecideParams {
  double epsilon;
  double confidence;
  uint64_t seed;
  double initial_t;
  double max_t;
  uint32_t reference_cutoff;
  uint32_t max_model_cutoff;
} AdiadioDecideParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *adiadio_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next library call on the same thread.
 */
const char *adiadio_last_error_message(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void adiadio_string_free(char *s);

/**
 * Parses an equation such as `"(x+1)^2 + (y+1)^2 - (z+1)^2"`.
 *
 * # Safety
 * `text` must be a nul-terminated string and `out` a writable pointer.
 */
enum AdiadioStatus adiadio_polynomial_parse(const char *text, struct AdiadioPolynomial **out);

/**
 * Releases a polynomial handle. Null is ignored.
 *
 * # Safety
 * `p` must come from [`adiadio_polynomial_parse`] and not have been freed.
 */
void adiadio_polynomial_free(struct AdiadioPolynomial *p);

/**
 * # Safety
 * `p` must be a live handle and `out` writable.
 */
enum AdiadioStatus adiadio_polynomial_num_vars(const struct AdiadioPolynomial *p, size_t *out);

/**
 * Canonical expanded form; free the result with [`adiadio_string_free`].
 *
 * # Safety
 * `p` must be a live handle and `out` writable.
 */
enum AdiadioStatus adiadio_polynomial_canonical(const struct AdiadioPolynomial *p, char **out);

/**
 * Exact value at a non-negative point, as a decimal string freed with
 * [`adiadio_string_free`].
 *
 * # Safety
 * `point` must hold `len` values and `out` be writable.
 */
enum AdiadioStatus adiadio_polynomial_evaluate(const struct AdiadioPolynomial *p,
                                               const uint64_t *point,
                                               size_t len,
                                               char **out);

/**
 * Number of roots with `0 <= x_i <= bounds[i]`.
 *
 * # Safety
 * `bounds` must hold `len` values and `out` be writable.
 */
enum AdiadioStatus adiadio_oracle_count(const struct AdiadioPolynomial *p,
                                        const uint64_t *bounds,
                                        size_t len,
                                        uint64_t volume_cap,
                                        size_t *out);

/**
 * Sorted lowest `levels` eigenvalues at `grid` equally spaced values of `s`,
 * written row by row (`out[k * levels + q]`) into `out`.
 *
 * # Safety
 * `out` must have room for `out_len` doubles.
 */
enum AdiadioStatus adiadio_spectral_flow_levels(const struct AdiadioPolynomial *p,
                                                double alpha,
                                                uint32_t cutoff,
                                                size_t levels,
                                                size_t grid,
                                                double *out,
                                                size_t out_len);

/**
 * Probability of ending in a minimizer of `H_P` after a linear-ramp run of
 * total time `total_time` from the coherent state.
 *
 * # Safety
 * `out` must be writable.
 */
enum AdiadioStatus adiadio_evolve_ground_probability(const struct AdiadioPolynomial *p,
                                                     double alpha,
                                                     uint32_t cutoff,
                                                     double total_time,
                                                     double *out);

/**
 * Library defaults for [`adiadio_decide`].
 */
struct AdiadioDecideParams adiadio_decide_params_default(void);

/**
 * Runs the decision loop. When `report_json` is not null it receives the
 * full report, freed with [`adiadio_string_free`].
 *
 * # Safety
 * `params` may be null (defaults); `verdict` must be writable.
 */
enum AdiadioStatus adiadio_decide(const struct AdiadioPolynomial *p,
                                  const struct AdiadioDecideParams *params,
                                  enum AdiadioVerdict *verdict,
                                  char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADIADIO_H */
