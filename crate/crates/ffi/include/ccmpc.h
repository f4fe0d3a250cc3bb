#ifndef CCMPC_H
#define CCMPC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum CcmpcError {
  CCMPC_ERROR_OK = 0,
  CCMPC_ERROR_NULL_POINTER = 1,
  CCMPC_ERROR_INVALID_UTF8 = 2,
  // Out-of-range argument, e.g. a probability outside (0, 1).
  CCMPC_ERROR_INVALID_ARGUMENT = 3,
  CCMPC_ERROR_DIMENSION = 4,
  // Malformed or unsupported problem or policy input.
  CCMPC_ERROR_PROBLEM = 5,
  CCMPC_ERROR_NUMERICAL = 6,
  // The synthesis produced no policy (infeasible or iteration limit).
  CCMPC_ERROR_NO_POLICY = 7,
  CCMPC_ERROR_BUFFER_TOO_SMALL = 8,
  CCMPC_ERROR_IO = 9,
  CCMPC_ERROR_PANIC = 10,
} CcmpcError;

// Outcome of a synthesis.
typedef enum CcmpcStatus {
  CCMPC_STATUS_OPTIMAL = 0,
  CCMPC_STATUS_INFEASIBLE = 1,
  CCMPC_STATUS_MAX_ITER = 2,
} CcmpcStatus;

// An affine disturbance-feedback policy.
typedef struct CcmpcPolicy CcmpcPolicy;

// A validated problem.
typedef struct CcmpcProblem CcmpcProblem;

// Result of [`ccmpc_synthesize`].
typedef struct CcmpcSynthesis CcmpcSynthesis;

// Scalar summary of a solve.
typedef struct CcmpcSolveSummary {
  enum CcmpcStatus status;
  double objective_value;
  double kkt_residual;
  double max_violation;
  // Optimal phase-1 slack; negative means strictly feasible.
  double phase1_slack;
  size_t phase1_iters;
  size_t barrier_steps;
} CcmpcSolveSummary;

// Empirical violation frequency with its 95% Wilson interval.
typedef struct CcmpcViolation {
  size_t violations;
  size_t runs;
  double rate;
  double ci_low;
  double ci_high;
} CcmpcViolation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL after a
// successful call. The pointer stays valid until the next call into the
// library on the same thread.
const char *ccmpc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ccmpc_version(void);

// Releases a string returned by the library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void ccmpc_string_free(char *s);

// Parses and validates a problem given as JSON text.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum CcmpcError ccmpc_problem_from_json(const char *json, struct CcmpcProblem **out);

// # Safety
// `p` must be NULL or a handle from [`ccmpc_problem_from_json`].
void ccmpc_problem_free(struct CcmpcProblem *p);

// State, input and horizon dimensions of a problem.
//
// # Safety
// `p` must be a live problem handle; the outputs must be valid pointers.
enum CcmpcError ccmpc_problem_dims(const struct CcmpcProblem *p,
                                   size_t *n,
                                   size_t *m,
                                   size_t *horizon);

// Solves the restricted program. An infeasible problem is not an error:
// the call succeeds and the summary reports the status.
//
// # Safety
// `p` must be a live problem handle and `out` a valid pointer.
enum CcmpcError ccmpc_synthesize(const struct CcmpcProblem *p, struct CcmpcSynthesis **out);

// # Safety
// `s` must be NULL or a handle from [`ccmpc_synthesize`].
void ccmpc_synthesis_free(struct CcmpcSynthesis *s);

// # Safety
// `s` must be a live synthesis handle and `out` a valid pointer.
enum CcmpcError ccmpc_synthesis_summary(const struct CcmpcSynthesis *s,
                                        struct CcmpcSolveSummary *out);

// Full solve report as JSON, to be released with [`ccmpc_string_free`].
//
// # Safety
// `s` must be a live synthesis handle and `out` a valid pointer.
enum CcmpcError ccmpc_synthesis_report_json(const struct CcmpcSynthesis *s, char **out);

// Copies the optimal policy into a new handle. Fails with
// [`CcmpcError::NoPolicy`] unless the solve was optimal.
//
// # Safety
// `s` must be a live synthesis handle and `out` a valid pointer.
enum CcmpcError ccmpc_synthesis_policy(const struct CcmpcSynthesis *s, struct CcmpcPolicy **out);

// Parses a policy in the JSON format written by the `ccmpc` tool.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum CcmpcError ccmpc_policy_from_json(const char *json, struct CcmpcPolicy **out);

// # Safety
// `p` must be NULL or a policy handle from this library.
void ccmpc_policy_free(struct CcmpcPolicy *p);

// Policy as JSON, to be released with [`ccmpc_string_free`].
//
// # Safety
// `p` must be a live policy handle and `out` a valid pointer.
enum CcmpcError ccmpc_policy_to_json(const struct CcmpcPolicy *p, char **out);

// Copies the decision vector (offsets, then the free gain entries
// column by column) into `buf`. `needed` always receives the length;
// pass `len = 0` to query it. A short buffer fails with
// [`CcmpcError::BufferTooSmall`] and is left untouched.
//
// # Safety
// `p` must be a live policy handle, `needed` a valid pointer and `buf`
// valid for `len` writes (it may be NULL when `len` is 0).
enum CcmpcError ccmpc_policy_theta(const struct CcmpcPolicy *p,
                                   double *buf,
                                   size_t len,
                                   size_t *needed);

// Closed-loop Monte Carlo: the fraction of `runs` trajectories that
// violate at least one hard constraint of the problem. Runs are
// reproducible for a given `seed` regardless of thread count.
//
// # Safety
// `p` and `policy` must be live handles and `out` a valid pointer.
enum CcmpcError ccmpc_simulate(const struct CcmpcProblem *p,
                               const struct CcmpcPolicy *policy,
                               size_t runs,
                               uint64_t seed,
                               struct CcmpcViolation *out);

// Per-row tightening factor of the separation restriction at row risk
// `alpha_row`.
//
// # Safety
// `out` must be a valid pointer.
enum CcmpcError ccmpc_beta_separation(double alpha_row, double *out);

// Tightening factor of the ellipsoidal restriction for `rows` rows
// sharing risk `alpha` with a noise of dimension `noise_dim`.
//
// # Safety
// `out` must be a valid pointer.
enum CcmpcError ccmpc_beta_ellipsoid(double alpha, size_t rows, size_t noise_dim, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CCMPC_H */
