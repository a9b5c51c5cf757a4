#ifndef QENGINE_H
#define QENGINE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum QeStatus {
  QE_STATUS_OK = 0,
  QE_STATUS_NULL_POINTER = 1,
  QE_STATUS_INVALID_ARGUMENT = 2,
  QE_STATUS_UNKNOWN_KEY = 3,
  QE_STATUS_INVALID_STATE = 4,
  QE_STATUS_INTEGRATION_DIVERGED = 5,
  QE_STATUS_TRUNCATION = 6,
  QE_STATUS_ILL_POSED_FIT = 7,
  QE_STATUS_UNDEFINED_EFFICIENCY = 8,
  QE_STATUS_OUT_OF_RANGE = 9,
  QE_STATUS_IO = 10,
  QE_STATUS_PANIC = 11,
} QeStatus;

/**
 * A completed cycle. Create with [`qe_run_cycle`].
 */
typedef struct QeCycle QeCycle;

/**
 * Engine parameters. Create with [`qe_params_new`].
 */
typedef struct QeParams QeParams;

/**
 * Cycle summary; `eta_c` and `eta_m` are NaN when undefined.
 */
typedef struct QeSummary {
  double t_gate_us;
  double tau3_us;
  double delta_n_o;
  double delta_n_t;
  double eta_c;
  double w_exact;
  double w_diag;
  double eta_m;
} QeSummary;

/**
 * One recorded instant of a cycle.
 */
typedef struct QeSnapshot {
  uint8_t stroke;
  double t_us;
  double p_ss;
  double p_sd_plus_ds;
  double p_dd;
  double n_b;
  double n_c;
  double concurrence;
  double ms_fidelity;
} QeSnapshot;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. Valid until the next
 * call into the library from the same thread; never null.
 */
const char *qe_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qe_version(void);

/**
 * New parameter set holding the defaults. Free with [`qe_params_free`].
 */
struct QeParams *qe_params_new(void);

/**
 * # Safety
 * `params` must come from [`qe_params_new`] and not be used afterwards.
 */
void qe_params_free(struct QeParams *params);

/**
 * Sets an `engine.*` key. NaN selects the derived default for
 * `engine.delta_khz` and `engine.gamma_eff`; `engine.propagation` takes
 * 0 (factored) or 1 (full). The parameter set is validated and left
 * unchanged on failure.
 *
 * # Safety
 * `params` must be a live handle and `key` a NUL-terminated string.
 */
enum QeStatus qe_params_set(struct QeParams *params, const char *key, double value);

/**
 * Reads an `engine.*` key (NaN for a derived default).
 *
 * # Safety
 * `params` must be a live handle, `key` NUL-terminated, `out` writable.
 */
enum QeStatus qe_params_get(const struct QeParams *params, const char *key, double *out);

/**
 * Closed-loop gate time `2π/δ` in μs.
 *
 * # Safety
 * `params` must be a live handle and `out` writable.
 */
enum QeStatus qe_params_gate_time(const struct QeParams *params, double *out);

/**
 * Runs one cycle. On success `*out` receives a handle to free with
 * [`qe_cycle_free`]; on failure it is set to null.
 *
 * # Safety
 * `params` must be a live handle and `out` writable.
 */
enum QeStatus qe_run_cycle(const struct QeParams *params,
                           double t_gate_us,
                           double tau3_us,
                           struct QeCycle **out);

/**
 * # Safety
 * `cycle` must come from [`qe_run_cycle`] and not be used afterwards.
 */
void qe_cycle_free(struct QeCycle *cycle);

/**
 * # Safety
 * `cycle` must be a live handle and `out` writable.
 */
enum QeStatus qe_cycle_summary(const struct QeCycle *cycle, struct QeSummary *out);

/**
 * Number of recorded snapshots across all strokes (0 for a null handle).
 *
 * # Safety
 * `cycle` must be null or a live handle.
 */
uintptr_t qe_cycle_series_len(const struct QeCycle *cycle);

/**
 * # Safety
 * `cycle` must be a live handle and `out` writable.
 */
enum QeStatus qe_cycle_snapshot(const struct QeCycle *cycle,
                                uintptr_t index,
                                struct QeSnapshot *out);

/**
 * Scans the transfer duration over `[lo_us, hi_us]` in steps of `step_us`.
 *
 * # Safety
 * `params` must be a live handle; `tau_star` and `delta_n_t` writable.
 */
enum QeStatus qe_optimize_transfer_time(const struct QeParams *params,
                                        double t_gate_us,
                                        double lo_us,
                                        double hi_us,
                                        double step_us,
                                        double *tau_star,
                                        double *delta_n_t);

/**
 * Ergotropy of a load density matrix under `H = a†a`, in units of the
 * mode quantum. `re`/`im` are row-major `dim × dim`; `im` may be null.
 *
 * # Safety
 * `re` (and `im` if non-null) must hold `dim*dim` values; `out` writable.
 */
enum QeStatus qe_ergotropy(const double *re, const double *im, uintptr_t dim, double *out);

/**
 * Wootters concurrence of a two-qubit density matrix (row-major 4 × 4,
 * basis SS, SD, DS, DD); `im` may be null.
 *
 * # Safety
 * `re` (and `im` if non-null) must hold 16 values; `out` writable.
 */
enum QeStatus qe_concurrence(const double *re, const double *im, double *out);

/**
 * Fits phonon populations `P_0..P_nmax` to a blue-sideband signal sampled at
 * `times`. `probs` must have room for `nmax + 1` values; `residual` may be
 * null.
 *
 * # Safety
 * `times` and `signal` must hold `len` values, `probs` `nmax + 1`.
 */
enum QeStatus qe_fit_populations(const struct QeParams *params,
                                 const double *times,
                                 const double *signal,
                                 uintptr_t len,
                                 uintptr_t nmax,
                                 double *probs,
                                 double *residual);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QENGINE_H */
