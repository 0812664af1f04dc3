#ifndef CONCAVE_CLF_H
#define CONCAVE_CLF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CclfStatus {
  CCLF_STATUS_OK = 0,
  CCLF_STATUS_NULL_POINTER = 1,
  CCLF_STATUS_INVALID_UTF8 = 2,
  CCLF_STATUS_INVALID_ARGUMENT = 3,
  CCLF_STATUS_PRECONDITION = 4,
  CCLF_STATUS_UNSUPPORTED = 5,
  CCLF_STATUS_INFEASIBLE = 6,
  CCLF_STATUS_TUNING = 7,
  CCLF_STATUS_NUMERICAL = 8,
  CCLF_STATUS_CONFIG = 9,
  CCLF_STATUS_IO = 10,
  CCLF_STATUS_BUFFER_TOO_SMALL = 11,
  CCLF_STATUS_PANIC = 12,
  CCLF_STATUS_OTHER = 13,
} CclfStatus;

/**
 * A comparison function `α`.
 */
typedef struct CclfComparison CclfComparison;

/**
 * A plant model with its CLF.
 */
typedef struct CclfPlant CclfPlant;

/**
 * A simulated closed-loop trajectory.
 */
typedef struct CclfTrajectory CclfTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. Valid until the next failing call.
 */
const char *cclf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cclf_version(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and must not be used afterwards.
 */
void cclf_string_free(char *s);

/**
 * `α(v) = σ·v`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CclfStatus cclf_comparison_linear(double sigma, struct CclfComparison **out);

/**
 * `α(v) = σ·s_rat(v)·v` with `ℓ` in absolute level units.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CclfStatus cclf_comparison_rational(double sigma,
                                         double k_min,
                                         double k_max,
                                         double ell,
                                         struct CclfComparison **out);

/**
 * Parses a comparison from JSON, e.g. `{"kind":"linear","parameters":{"sigma":3}}`.
 * A `{"normalized_rational":{...}}` block is normalized at level `c`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` a valid pointer.
 */
enum CclfStatus cclf_comparison_from_json(const char *json, double c, struct CclfComparison **out);

/**
 * # Safety
 * `f` must come from this library (or be NULL) and must not be used afterwards.
 */
void cclf_comparison_free(struct CclfComparison *f);

/**
 * # Safety
 * `f` and `out` must be valid pointers.
 */
enum CclfStatus cclf_comparison_value(const struct CclfComparison *f, double v, double *out);

/**
 * Crossing time of `ẏ = −α(y)` from `c` to `eps`.
 *
 * # Safety
 * `f` and `out` must be valid pointers.
 */
enum CclfStatus cclf_crossing_time(const struct CclfComparison *f,
                                   double eps,
                                   double c,
                                   double *out);

/**
 * Windowed nominal rate `ln(c/ε)/T`.
 *
 * # Safety
 * `f` and `out` must be valid pointers.
 */
enum CclfStatus cclf_nominal_rate(const struct CclfComparison *f,
                                  double eps,
                                  double c,
                                  double *out);

/**
 * Endpoint-relaxation ratio `α(c)/(σ_α·c)`.
 *
 * # Safety
 * `f` and `out` must be valid pointers.
 */
enum CclfStatus cclf_relaxation_ratio(const struct CclfComparison *f,
                                      double eps,
                                      double c,
                                      double *out);

/**
 * `ℓ = (r − k_min)·c/(k_max − r)`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CclfStatus cclf_normalize_ell(double k_min, double k_max, double r, double c, double *out);

/**
 * Closed-form windowed rate of the rational comparison.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CclfStatus cclf_closed_form_rate(double k_min,
                                      double k_max,
                                      double ell,
                                      double sigma,
                                      double eps,
                                      double c,
                                      double *out);

/**
 * Built-in plant: `"integrator"`, `"pendulum"` or `"quadrotor"`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` a valid pointer.
 */
enum CclfStatus cclf_plant_preset(const char *name, struct CclfPlant **out);

/**
 * Plant from a JSON parameter block, e.g. `{"preset":"pendulum","mass":1.2}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` a valid pointer.
 */
enum CclfStatus cclf_plant_from_json(const char *json, struct CclfPlant **out);

/**
 * # Safety
 * `p` must come from this library (or be NULL) and must not be used afterwards.
 */
void cclf_plant_free(struct CclfPlant *p);

/**
 * # Safety
 * `p`, `n` and `m` must be valid pointers.
 */
enum CclfStatus cclf_plant_dims(const struct CclfPlant *p, size_t *n, size_t *m);

/**
 * Copies the protocol's initial state into `buf` (`len ≥ n`).
 *
 * # Safety
 * `p` must be valid and `buf` must hold `len` doubles.
 */
enum CclfStatus cclf_plant_initial_state(const struct CclfPlant *p, double *buf, size_t len);

/**
 * `V(x)`.
 *
 * # Safety
 * `p` and `out` must be valid; `x` must hold `len` doubles.
 */
enum CclfStatus cclf_plant_clf(const struct CclfPlant *p, const double *x, size_t len, double *out);

/**
 * `L_fV(x)` into `lf` and the `m` entries of `L_gV(x)` into `lg`.
 *
 * # Safety
 * `p` and `lf` must be valid; `x` must hold `len` doubles and `lg` `lg_len` doubles.
 */
enum CclfStatus cclf_plant_lie_derivatives(const struct CclfPlant *p,
                                           const double *x,
                                           size_t len,
                                           double *lf,
                                           double *lg,
                                           size_t lg_len);

/**
 * Simulates the plant from its initial state.
 *
 * `controller_json` uses the experiment-config controller format; comparisons
 * given as `normalized_rational` are normalized at `c = V(x₀)`. `sim_json`
 * may be NULL for the defaults (1 ms, 5 s, 4 substeps).
 *
 * # Safety
 * `p` and `out` must be valid; strings must be NUL-terminated.
 */
enum CclfStatus cclf_simulate(const struct CclfPlant *p,
                              const char *controller_json,
                              const char *sim_json,
                              struct CclfTrajectory **out);

/**
 * # Safety
 * `t` must come from this library (or be NULL) and must not be used afterwards.
 */
void cclf_trajectory_free(struct CclfTrajectory *t);

/**
 * Number of samples.
 *
 * # Safety
 * `t` and `out` must be valid pointers.
 */
enum CclfStatus cclf_trajectory_len(const struct CclfTrajectory *t, size_t *out);

/**
 * Sample times (s).
 *
 * # Safety
 * `t` must be valid and `buf` must hold `len` doubles.
 */
enum CclfStatus cclf_trajectory_times(const struct CclfTrajectory *t, double *buf, size_t len);

/**
 * `V(x(t_k))` per sample.
 *
 * # Safety
 * `t` must be valid and `buf` must hold `len` doubles.
 */
enum CclfStatus cclf_trajectory_values(const struct CclfTrajectory *t, double *buf, size_t len);

/**
 * Full record as CSV; release with `cclf_string_free`.
 *
 * # Safety
 * `t` and `out` must be valid pointers.
 */
enum CclfStatus cclf_trajectory_csv(const struct CclfTrajectory *t, char **out);

/**
 * Crossing times, nominal rates and energies at `ε = xi[i]·V(x₀)` as JSON; release with `cclf_string_free`.
 *
 * # Safety
 * `t` and `out` must be valid; `xi` must hold `n` doubles.
 */
enum CclfStatus cclf_trajectory_metrics_json(const struct CclfTrajectory *t,
                                             const double *xi,
                                             size_t n,
                                             char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONCAVE_CLF_H */
