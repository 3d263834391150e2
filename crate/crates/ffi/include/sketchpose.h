#ifndef SKETCHPOSE_H
#define SKETCHPOSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Number of skeleton joints.
#define SP_JOINT_COUNT 17

typedef enum {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  SP_STATUS_INVALID_ARGUMENT = 2,
  // The sketch could not be read as a figure.
  SP_STATUS_UNINTERPRETABLE = 3,
  // Too few confident joints to lift.
  SP_STATUS_LIFT_FAILED = 4,
  // The IK request was rejected.
  SP_STATUS_IK_FAILED = 5,
  // The caller's buffer is too small.
  SP_STATUS_BUFFER_TOO_SMALL = 6,
  SP_STATUS_INTERNAL = 7,
} SpStatus;

// Opaque session handle.
typedef struct SpSession SpSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty when none. The
// pointer stays valid until the next failing call on the same thread.
const char *sp_last_error(void);

// Static name of joint `index`, or null when out of range.
const char *sp_joint_name(uint32_t index);

// New session at the standing rest pose with the default camera.
SpSession *sp_session_new(void);

// Frees a session. Null is ignored.
//
// # Safety
// `s` must come from `sp_session_new` and not be used afterwards.
void sp_session_free(SpSession *s);

// Back to the rest pose, forgetting the last sketch.
SpStatus sp_session_reset(SpSession *s);

// Interprets a sketch and lifts it to a new pose. `points` holds x, y
// pairs in canvas pixels for all strokes back to back; `stroke_lengths`
// gives the point count of each stroke.
//
// # Safety
// `points` must hold `2 * sum(stroke_lengths)` values and `stroke_lengths`
// `stroke_count` values.
SpStatus sp_session_set_sketch(SpSession *s,
                               const double *points,
                               const uintptr_t *stroke_lengths,
                               uintptr_t stroke_count);

// World joint positions of the current pose, x, y, z per joint in index
// order; `out` needs `3 * SP_JOINT_COUNT` values.
SpStatus sp_session_joint_positions(SpSession *s, double *out, uintptr_t len);

// 2D joints and confidences from the last sketch: `xy` needs
// `2 * SP_JOINT_COUNT` values, `confidence` `SP_JOINT_COUNT`.
SpStatus sp_session_joints2d(SpSession *s,
                             double *xy,
                             uintptr_t xy_len,
                             double *confidence,
                             uintptr_t confidence_len);

// Sets a joint's local rotation vector (radians), clamped into its limits.
SpStatus sp_session_set_rotation(SpSession *s,
                                 uint32_t joint_index,
                                 double rx,
                                 double ry,
                                 double rz);

// Writes a joint's local rotation vector into `out[0..3]`.
SpStatus sp_session_rotation(SpSession *s, uint32_t joint_index, double *out, uintptr_t len);

// Moves `effector` toward the world target by IK on the chain from the
// pelvis; writes the remaining distance in meters to `error` when non-null.
//
// # Safety
// `error` must be null or point to a writable double.
SpStatus sp_session_solve_ik(SpSession *s,
                             uint32_t effector,
                             double x,
                             double y,
                             double z,
                             double *error);

// Current pose and primitive body as a JSON document. Free the result
// with `sp_string_free`; null on failure.
char *sp_session_export_json(SpSession *s);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `p` must come from `sp_session_export_json` and not be freed twice.
void sp_string_free(char *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SKETCHPOSE_H */
