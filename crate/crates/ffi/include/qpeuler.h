#ifndef QPEULER_H
#define QPEULER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum QpStatus {
  QP_STATUS_OK = 0,
  QP_STATUS_NULL_POINTER = 1,
  QP_STATUS_INVALID_ARGUMENT = 2,
  QP_STATUS_INVALID_DIMENSIONS = 3,
  QP_STATUS_RESONANT = 4,
  QP_STATUS_SOLVER_ABORT = 5,
  QP_STATUS_PANIC = 6,
} QpStatus;

// A real quasi-periodic vector field on a mode set.
typedef struct QpField QpField;

// A truncated mode box with its frequency matrix.
typedef struct QpModeSet QpModeSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *qp_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *qp_version(void);

// Builds the mode box `|m|_∞ ≤ radius` for the row-major `torus_dim × space_dim`
// matrix `omega`.
//
// # Safety
// `omega` must point to `torus_dim * space_dim` doubles; `out` must be writable.
enum QpStatus qp_modeset_new(size_t torus_dim,
                             size_t space_dim,
                             const double *omega,
                             uint32_t radius,
                             struct QpModeSet **out);

// # Safety
// `ms` must be null or a handle from [`qp_modeset_new`] not yet freed.
void qp_modeset_free(struct QpModeSet *ms);

// Number of modes in the box, or 0 for a null handle.
//
// # Safety
// `ms` must be null or a live handle.
size_t qp_modeset_len(const struct QpModeSet *ms);

// Smallest separation `|Λ_m − Λ_m'|` over distinct modes; `ok` is set to 1
// when it is at least `tol`.
//
// # Safety
// `ms` must be a live handle; `ok` and `separation` writable or null.
enum QpStatus qp_modeset_check_nonresonance(const struct QpModeSet *ms,
                                            double tol,
                                            int32_t *ok,
                                            double *separation);

// The zero field with `space_dim` components.
//
// # Safety
// `ms` must be a live handle; `out` writable.
enum QpStatus qp_field_zero(const struct QpModeSet *ms, struct QpField **out);

// Seeded random divergence-free field on `|m|_∞ ≤ sub_radius` with
// `‖u‖_{0,s} = amplitude`.
//
// # Safety
// `ms` must be a live handle; `out` writable.
enum QpStatus qp_field_random_divfree(const struct QpModeSet *ms,
                                      uint64_t seed,
                                      uint32_t sub_radius,
                                      double amplitude,
                                      double s,
                                      struct QpField **out);

// # Safety
// `f` must be null or a live field handle.
void qp_field_free(struct QpField *f);

// Sets `û_{component, m} = re + i·im` and its partner `û_{component, −m}`
// to the conjugate. For `m = 0` the imaginary part must vanish.
//
// # Safety
// `f` must be a live handle; `m` must point to `m_len` ints.
enum QpStatus qp_field_set_mode(struct QpField *f,
                                const int32_t *m,
                                size_t m_len,
                                size_t component,
                                double re,
                                double im);

// Reads `û_{component, m}`.
//
// # Safety
// `f` must be a live handle; `m` must point to `m_len` ints; `re`, `im` writable.
enum QpStatus qp_field_coefficient(const struct QpField *f,
                                   const int32_t *m,
                                   size_t m_len,
                                   size_t component,
                                   double *re,
                                   double *im);

// Evaluates the field at `x` (`x_len = space_dim`) into `out`
// (`out_len = space_dim`).
//
// # Safety
// Pointers must reference arrays of the stated lengths.
enum QpStatus qp_field_evaluate(const struct QpField *f,
                                const double *x,
                                size_t x_len,
                                double *out,
                                size_t out_len);

// Averaged energy `½ Σ |û_m|²`.
//
// # Safety
// `f` must be a live handle; `out` writable.
enum QpStatus qp_field_energy(const struct QpField *f, double *out);

// `‖div u‖_0`.
//
// # Safety
// `f` must be a live handle; `out` writable.
enum QpStatus qp_field_divergence_norm(const struct QpField *f, double *out);

// The pressure term `𝒫(u)` as a new field.
//
// # Safety
// `f` must be a live handle; `out` writable.
enum QpStatus qp_field_pressure_gradient(const struct QpField *f, struct QpField **out);

// Integrates the Euler equation with RK4 from `u` over `[0, t_end]` with
// step `dt`, aborting when `‖div u‖_0` exceeds `div_tol`. On success `out`
// receives the final field; on [`QpStatus::SolverAbort`] it receives the
// last state reached and `t_reached` its time.
//
// # Safety
// `u` must be a live handle; `out` writable; `t_reached` writable or null.
enum QpStatus qp_euler_integrate(const struct QpField *u,
                                 double dt,
                                 double t_end,
                                 double div_tol,
                                 struct QpField **out,
                                 double *t_reached);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QPEULER_H */
