#ifndef GPOB_H
#define GPOB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GpobStatus {
  GPOB_STATUS_OK = 0,
  GPOB_STATUS_NULL_POINTER = 1,
  GPOB_STATUS_INVALID_ARGUMENT = 2,
  GPOB_STATUS_NON_CONVERGENCE = 3,
  GPOB_STATUS_BAD_GEOMETRY = 4,
  GPOB_STATUS_ELLIPTICITY_LOSS = 5,
  GPOB_STATUS_BUFFER_TOO_SMALL = 6,
  GPOB_STATUS_INTERNAL = 7,
  GPOB_STATUS_PANIC = 8,
  GPOB_STATUS_IO = 9,
} GpobStatus;

typedef enum GpobShape {
  GPOB_SHAPE_DISK = 0,
  GPOB_SHAPE_ELLIPSE = 1,
} GpobShape;

/*
 Converged potential flow on its grid.
 */
typedef struct GpobFlow GpobFlow;

/*
 Converged traveling wave on its half-plane grid.
 */
typedef struct GpobWave GpobWave;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Static description of a status code.
 */
const char *gpob_status_string(enum GpobStatus status);

/*
 Copies the last error message of this thread (NUL-terminated, truncated
 to `len`) and returns its full length in bytes.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t gpob_last_error(char *buf, size_t len);

/*
 Speed c = 2b/√(1 − b²) of the limiting wave for a local speed² `b2`.

 # Safety
 `out` must be null or valid for a write.
 */
enum GpobStatus gpob_local_mach_speed(double b2, double *out);

/*
 Solves the potential flow at far-field speed `delta` past a disk
 (`a` = radius) or an ellipse with semi-axes (`a`, `b`).

 # Safety
 `out` must be null or valid for a write; on success `*out` owns a handle
 to release with `gpob_flow_free`.
 */
enum GpobStatus gpob_flow_solve(enum GpobShape shape,
                                double a,
                                double b,
                                size_t n_radial,
                                size_t n_angular,
                                double r_far,
                                double stretch,
                                double delta,
                                struct GpobFlow **out);

/*
 # Safety
 `flow` must be null or a handle from `gpob_flow_solve` not yet freed.
 */
void gpob_flow_free(struct GpobFlow *flow);

/*
 Maximum of |∇Φ|² on the obstacle boundary.

 # Safety
 `flow` must be a live handle; `out` valid for a write.
 */
enum GpobStatus gpob_flow_max_boundary_speed2(const struct GpobFlow *flow, double *out);

/*
 Grid dimensions (radial, angular).

 # Safety
 `flow` must be a live handle; both out-pointers valid for writes.
 */
enum GpobStatus gpob_flow_shape(const struct GpobFlow *flow, size_t *n_radial, size_t *n_angular);

/*
 Copies Φ (radial index outermost) into `buf` of length `len`.

 # Safety
 `flow` must be a live handle; `buf` must point to `len` writable doubles.
 */
enum GpobStatus gpob_flow_copy_phi(const struct GpobFlow *flow, double *buf, size_t len);

/*
 Traveling wave at speed `c` on the half-plane box [0, L] × [−L, L] with
 spacing `h`, from the vortex-pair ansatz.

 # Safety
 `out` must be null or valid for a write; on success `*out` owns a handle
 to release with `gpob_wave_free`.
 */
enum GpobStatus gpob_wave_solve(double c, double box_size, double h, struct GpobWave **out);

/*
 # Safety
 `wave` must be null or a handle from `gpob_wave_solve` not yet freed.
 */
void gpob_wave_free(struct GpobWave *wave);

/*
 y₁ of the +1 vortex and the final residual norm.

 # Safety
 `wave` must be a live handle; both out-pointers valid for writes.
 */
enum GpobStatus gpob_wave_core(const struct GpobWave *wave, double *d_c, double *residual);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GPOB_H */
