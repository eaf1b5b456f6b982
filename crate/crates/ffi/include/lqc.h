#ifndef LQC_H
#define LQC_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of every call.
typedef enum LqcStatus {
  LQC_STATUS_OK = 0,
  LQC_STATUS_NULL_POINTER = 1,
  // Bad shapes, non-finite or non-symmetric inputs, malformed config.
  LQC_STATUS_INVALID_ARGUMENT = 2,
  // The trace budget is too small for the system.
  LQC_STATUS_INFEASIBLE = 3,
  // An iterative solver failed or a policy turned out unstable.
  LQC_STATUS_NUMERICAL = 4,
  // The system cannot be driven to zero as a reset requires.
  LQC_STATUS_RANK_DEFICIENT = 5,
  LQC_STATUS_IO = 6,
  // A Rust panic was caught at the boundary.
  LQC_STATUS_PANIC = 7,
} LqcStatus;

// Follow-the-lazy-leader with automatic resets.
typedef struct LqcFll LqcFll;

// Online gradient descent over the feasible set.
typedef struct LqcOgd LqcOgd;

// The feasible set of joint covariances for a system and trace budget `ν`.
typedef struct LqcProblem LqcProblem;

// Linear system `x' = A x + B u + w` with `w ~ N(0, W)`.
typedef struct LqcSystem LqcSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or an empty string.
// The pointer stays valid until the next `lqc_*` call on the same thread.
const char *lqc_last_error(void);

// Creates a system from row-major `A` (`d×d`), `B` (`d×k`) and `W` (`d×d`).
//
// # Safety
// The arrays must hold the stated number of doubles; `out` must be writable.
enum LqcStatus lqc_system_new(size_t d,
                              size_t k,
                              const double *a,
                              const double *b,
                              const double *w,
                              struct LqcSystem **out);

// # Safety
// `sys` must be null or a handle from [`lqc_system_new`] not yet freed.
void lqc_system_free(struct LqcSystem *sys);

// # Safety
// `sys` must be a live handle; `d` and `k` must be writable.
enum LqcStatus lqc_system_dims(const struct LqcSystem *sys, size_t *d, size_t *k);

// # Safety
// `sys` must be a live handle; `out` must be writable.
enum LqcStatus lqc_problem_new(const struct LqcSystem *sys, double nu, struct LqcProblem **out);

// # Safety
// `prob` must be null or a handle from [`lqc_problem_new`] not yet freed.
void lqc_problem_free(struct LqcProblem *prob);

// Frobenius projection of the `(d+k)×(d+k)` matrix `sigma` onto the
// feasible set, written to `out` (which may alias `sigma`).
//
// # Safety
// `prob` must be a live handle; `sigma` and `out` must hold `(d+k)²` doubles.
enum LqcStatus lqc_problem_project(const struct LqcProblem *prob, const double *sigma, double *out);

// Best gain for the fixed costs `(Q, R)` under the problem's budget,
// written as a row-major `k×d` matrix. `tol <= 0` selects the default.
//
// # Safety
// `prob` must be a live handle; arrays must be sized by the system.
enum LqcStatus lqc_oracle(const struct LqcProblem *prob,
                          const double *q,
                          const double *r,
                          double tol,
                          double *gain_out);

// # Safety
// `prob` must be a live handle; `out` must be writable.
enum LqcStatus lqc_ogd_new(const struct LqcProblem *prob,
                           double eta,
                           uint64_t seed,
                           struct LqcOgd **out);

// # Safety
// `ogd` must be null or a handle from [`lqc_ogd_new`] not yet freed.
void lqc_ogd_free(struct LqcOgd *ogd);

// Samples a control for state `x` (length `d`) into `u_out` (length `k`).
//
// # Safety
// `ogd` must be a live handle; arrays must be sized by the system.
enum LqcStatus lqc_ogd_act(struct LqcOgd *ogd, const double *x, double *u_out);

// Takes one gradient step on the revealed costs; writes the Frobenius norm
// of the step to `step_out` when it is not null.
//
// # Safety
// `ogd` must be a live handle; arrays must be sized by the system.
enum LqcStatus lqc_ogd_update(struct LqcOgd *ogd,
                              const double *q,
                              const double *r,
                              double *step_out);

// Current gain as a row-major `k×d` matrix.
//
// # Safety
// `ogd` must be a live handle; `gain_out` must hold `k·d` doubles.
enum LqcStatus lqc_ogd_gain(const struct LqcOgd *ogd, double *gain_out);

// Current joint covariance iterate as a row-major `(d+k)×(d+k)` matrix.
//
// # Safety
// `ogd` must be a live handle; `sigma_out` must hold `(d+k)²` doubles.
enum LqcStatus lqc_ogd_sigma(const struct LqcOgd *ogd, double *sigma_out);

// # Safety
// `prob` must be a live handle; `out` must be writable.
enum LqcStatus lqc_fll_new(const struct LqcProblem *prob,
                           double eta,
                           uint64_t seed,
                           struct LqcFll **out);

// # Safety
// `fll` must be null or a handle from [`lqc_fll_new`] not yet freed.
void lqc_fll_free(struct LqcFll *fll);

// Control for state `x` into `u_out`; `resetting_out`, when not null,
// receives whether the control comes from a reset.
//
// # Safety
// `fll` must be a live handle; arrays must be sized by the system.
enum LqcStatus lqc_fll_act(struct LqcFll *fll, const double *x, double *u_out, bool *resetting_out);

// Absorbs the revealed costs; `switched_out`, when not null, receives
// whether the gain changed.
//
// # Safety
// `fll` must be a live handle; arrays must be sized by the system.
enum LqcStatus lqc_fll_update(struct LqcFll *fll,
                              const double *q,
                              const double *r,
                              bool *switched_out);

// # Safety
// `fll` must be a live handle; `gain_out` must hold `k·d` doubles.
enum LqcStatus lqc_fll_gain(const struct LqcFll *fll, double *gain_out);

// # Safety
// `fll` must be a live handle; `count_out` must be writable.
enum LqcStatus lqc_fll_switch_count(const struct LqcFll *fll, size_t *count_out);

// Runs the experiment described by the JSON `config` and writes
// `trace.csv` and `summary.json` under `out_dir`. `regret_out`, when not
// null, receives the regret of the first replicate. A replicate that fails
// mid-run still writes its partial trace and yields `Numerical`.
//
// # Safety
// `config` and `out_dir` must be NUL-terminated strings.
enum LqcStatus lqc_run_experiment(const char *config, const char *out_dir, double *regret_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LQC_H */
