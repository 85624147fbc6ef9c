#ifndef FIREPBT_H
#define FIREPBT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FpStatus {
  FP_STATUS_OK = 0,
  FP_STATUS_NULL_POINTER = 1,
  FP_STATUS_INVALID_ARGUMENT = 2,
  FP_STATUS_DEGENERATE_INPUT = 3,
  FP_STATUS_CONFIG = 4,
  FP_STATUS_RUNTIME = 5,
  FP_STATUS_UTF8 = 6,
  FP_STATUS_PANIC = 7,
} FpStatus;

/**
 * A training curve under construction.
 */
typedef struct FpCurve FpCurve;

/**
 * A finished experiment: its event log and report.
 */
typedef struct FpRun FpRun;

/**
 * Result of comparing two curves. Overlap indices and the p-value are only
 * meaningful when `has_overlap` is set.
 */
typedef struct FpComparison {
  double score_diff;
  bool has_overlap;
  size_t r;
  size_t s;
  size_t n;
  bool used_penalization;
  double p_value;
} FpComparison;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *fp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fp_version(void);

/**
 * New empty curve whose lineage starts at `origin_step`.
 */
struct FpCurve *fp_curve_new(uint64_t origin_step);

/**
 * # Safety
 * `curve` must be null or a pointer from [`fp_curve_new`] not yet freed.
 */
void fp_curve_free(struct FpCurve *curve);

/**
 * Appends a point. Steps must increase with a constant spacing and scores
 * must be finite.
 *
 * # Safety
 * `curve` must be a live handle from [`fp_curve_new`].
 */
enum FpStatus fp_curve_push(struct FpCurve *curve, uint64_t step, double score);

/**
 * # Safety
 * `curve` must be a live handle; `out_len` must be writable.
 */
enum FpStatus fp_curve_len(const struct FpCurve *curve, size_t *out_len);

/**
 * Signed comparison of `a` against `b`, with the binomial p-value when the
 * curves overlap.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be writable.
 */
enum FpStatus fp_compare_curves(const struct FpCurve *a,
                                const struct FpCurve *b,
                                struct FpComparison *out);

/**
 * One-sided p-value that `a` lies above `b`. Writes NaN and sets
 * `*out_has_overlap` to false when the curves do not overlap.
 *
 * # Safety
 * `a` and `b` must be live handles; both out pointers must be writable.
 */
enum FpStatus fp_binom_test_curves(const struct FpCurve *a,
                                   const struct FpCurve *b,
                                   double *out_p,
                                   bool *out_has_overlap);

/**
 * `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum FpStatus fp_exact_binomial_tail(uint64_t k, uint64_t n, double *out);

/**
 * Runs an experiment from a JSON config. `threads` = 0 uses the default pool
 * size; results do not depend on it.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out_run` must be writable.
 */
enum FpStatus fp_run_experiment(const char *config_json, uint32_t threads, struct FpRun **out_run);

/**
 * The run's event log as JSON lines, or null for a null handle.
 *
 * # Safety
 * `run` must be null or a live handle from [`fp_run_experiment`].
 */
const char *fp_run_events_jsonl(const struct FpRun *run);

/**
 * The run's report as a JSON object, or null for a null handle.
 *
 * # Safety
 * `run` must be null or a live handle from [`fp_run_experiment`].
 */
const char *fp_run_report_json(const struct FpRun *run);

/**
 * # Safety
 * `run` must be null or a handle from [`fp_run_experiment`] not yet freed.
 */
void fp_run_free(struct FpRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FIREPBT_H */
