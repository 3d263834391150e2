//! C ABI over the sketch-to-pose engine.
//!
//! A `SpSession` holds one editable pose. Every call returns an `SpStatus`;
//! on failure `sp_last_error()` describes the most recent error on the
//! calling thread. Arrays are caller-owned. Joint indices follow
//! `sp_joint_name` (0 = pelvis, 16 = r_ankle). Panics never cross the
//! boundary; they surface as `SP_STATUS_INTERNAL`.
//!
//! Session arguments must be null or a live handle from `sp_session_new`,
//! and output buffers must hold at least the length passed with them.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;

use nalgebra::{Vector2, Vector3};
use sketchpose::body_model::{fit_primitives, forward_kinematics, JointId, Pose, SkeletonTemplate, JOINT_COUNT};
use sketchpose::camera::Camera;
use sketchpose::interpret::{interpret_sketch, RawStroke};
use sketchpose::kinematics::{set_joint_rotation, solve_ik, IkRequest};
use sketchpose::lift::{lift, Joints2D, LiftConfig};

/// Number of skeleton joints.
pub const SP_JOINT_COUNT: usize = 17;
const _: () = assert!(SP_JOINT_COUNT == JOINT_COUNT);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The sketch could not be read as a figure.
    Uninterpretable = 3,
    /// Too few confident joints to lift.
    LiftFailed = 4,
    /// The IK request was rejected.
    IkFailed = 5,
    /// The caller's buffer is too small.
    BufferTooSmall = 6,
    Internal = 7,
}

/// Opaque session handle.
pub struct SpSession {
    template: &'static SkeletonTemplate,
    camera: Camera,
    lift: LiftConfig,
    pose: Pose,
    joints2d: Option<Joints2D>,
    sketches: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn guard(f: impl FnOnce() -> Result<(), (SpStatus, String)>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpStatus::Internal
        }
    }
}

fn session_mut<'a>(s: *mut SpSession) -> Result<&'a mut SpSession, (SpStatus, String)> {
    // SAFETY: the handle contract in the module docs.
    unsafe { s.as_mut() }.ok_or((SpStatus::NullPointer, "null session".into()))
}

fn joint(index: u32) -> Result<JointId, (SpStatus, String)> {
    JointId::from_index(index as usize).ok_or((SpStatus::InvalidArgument, format!("joint index {index} out of range")))
}

fn out_slice<'a>(ptr: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], (SpStatus, String)> {
    if ptr.is_null() {
        return Err((SpStatus::NullPointer, "null output buffer".into()));
    }
    if len < need {
        return Err((SpStatus::BufferTooSmall, format!("buffer holds {len} values, need {need}")));
    }
    // SAFETY: non-null and the caller promises `len` writable values.
    Ok(unsafe { std::slice::from_raw_parts_mut(ptr, len) })
}

/// Message for the last failed call on this thread; empty when none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of joint `index`, or null when out of range.
#[no_mangle]
pub extern "C" fn sp_joint_name(index: u32) -> *const c_char {
    static NAMES: OnceLock<Vec<CString>> = OnceLock::new();
    let names = NAMES.get_or_init(|| JointId::ALL.iter().map(|j| CString::new(j.name()).unwrap()).collect());
    names.get(index as usize).map_or(std::ptr::null(), |n| n.as_ptr())
}

/// New session at the standing rest pose with the default camera.
#[no_mangle]
pub extern "C" fn sp_session_new() -> *mut SpSession {
    let template = SkeletonTemplate::canonical();
    Box::into_raw(Box::new(SpSession {
        template,
        camera: Camera::default(),
        lift: LiftConfig::default(),
        pose: Pose::standing(template),
        joints2d: None,
        sketches: 0,
    }))
}

/// Frees a session. Null is ignored.
///
/// # Safety
/// `s` must come from `sp_session_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_session_free(s: *mut SpSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Back to the rest pose, forgetting the last sketch.
#[no_mangle]
pub unsafe extern "C" fn sp_session_reset(s: *mut SpSession) -> SpStatus {
    guard(|| {
        let s = session_mut(s)?;
        s.pose = Pose::standing(s.template);
        s.joints2d = None;
        Ok(())
    })
}

/// Interprets a sketch and lifts it to a new pose. `points` holds x, y
/// pairs in canvas pixels for all strokes back to back; `stroke_lengths`
/// gives the point count of each stroke.
///
/// # Safety
/// `points` must hold `2 * sum(stroke_lengths)` values and `stroke_lengths`
/// `stroke_count` values.
#[no_mangle]
pub unsafe extern "C" fn sp_session_set_sketch(
    s: *mut SpSession,
    points: *const f64,
    stroke_lengths: *const usize,
    stroke_count: usize,
) -> SpStatus {
    guard(|| {
        let s = session_mut(s)?;
        if stroke_count > 0 && (points.is_null() || stroke_lengths.is_null()) {
            return Err((SpStatus::NullPointer, "null stroke arrays".into()));
        }
        let lengths = if stroke_count == 0 { &[][..] } else { std::slice::from_raw_parts(stroke_lengths, stroke_count) };
        let total: usize = lengths.iter().sum();
        let xy = if total == 0 { &[][..] } else { std::slice::from_raw_parts(points, 2 * total) };
        if xy.iter().any(|v| !v.is_finite()) {
            return Err((SpStatus::InvalidArgument, "non-finite stroke coordinate".into()));
        }
        let mut strokes = Vec::with_capacity(stroke_count);
        let mut at = 0;
        for &n in lengths {
            strokes.push(RawStroke::new((at..at + n).map(|i| Vector2::new(xy[2 * i], xy[2 * i + 1])).collect()));
            at += n;
        }
        let it = interpret_sketch(&strokes, s.template, &s.camera).map_err(|e| (SpStatus::Uninterpretable, e.to_string()))?;
        s.sketches += 1;
        let lifted = lift(&it.joints, s.template, &s.camera, &s.lift, s.sketches)
            .map_err(|e| (SpStatus::LiftFailed, e.to_string()))?;
        s.pose = lifted.pose;
        s.joints2d = Some(it.joints);
        Ok(())
    })
}

/// World joint positions of the current pose, x, y, z per joint in index
/// order; `out` needs `3 * SP_JOINT_COUNT` values.
#[no_mangle]
pub unsafe extern "C" fn sp_session_joint_positions(s: *mut SpSession, out: *mut f64, len: usize) -> SpStatus {
    guard(|| {
        let s = session_mut(s)?;
        let out = out_slice(out, len, 3 * JOINT_COUNT)?;
        let fk = forward_kinematics(s.template, &s.pose).map_err(|e| (SpStatus::Internal, e.to_string()))?;
        for j in JointId::ALL {
            out[3 * j.index()..3 * j.index() + 3].copy_from_slice(fk[j].as_slice());
        }
        Ok(())
    })
}

/// 2D joints and confidences from the last sketch: `xy` needs
/// `2 * SP_JOINT_COUNT` values, `confidence` `SP_JOINT_COUNT`.
#[no_mangle]
pub unsafe extern "C" fn sp_session_joints2d(
    s: *mut SpSession,
    xy: *mut f64,
    xy_len: usize,
    confidence: *mut f64,
    confidence_len: usize,
) -> SpStatus {
    guard(|| {
        let s = session_mut(s)?;
        let j2 = s.joints2d.as_ref().ok_or((SpStatus::InvalidArgument, "no sketch has been set".into()))?;
        let xy = out_slice(xy, xy_len, 2 * JOINT_COUNT)?;
        let conf = out_slice(confidence, confidence_len, JOINT_COUNT)?;
        for j in JointId::ALL {
            xy[2 * j.index()] = j2.positions[j].x;
            xy[2 * j.index() + 1] = j2.positions[j].y;
            conf[j.index()] = j2.confidence[j];
        }
        Ok(())
    })
}

/// Sets a joint's local rotation vector (radians), clamped into its limits.
#[no_mangle]
pub unsafe extern "C" fn sp_session_set_rotation(s: *mut SpSession, joint_index: u32, rx: f64, ry: f64, rz: f64) -> SpStatus {
    guard(|| {
        let s = session_mut(s)?;
        let j = joint(joint_index)?;
        if s.template.parent(j).is_none() {
            return Err((SpStatus::InvalidArgument, "the root has no local rotation".into()));
        }
        let r = Vector3::new(rx, ry, rz);
        if !r.iter().all(|v| v.is_finite()) {
            return Err((SpStatus::InvalidArgument, "non-finite rotation".into()));
        }
        s.pose = set_joint_rotation(&s.pose, j, r, s.template);
        Ok(())
    })
}

/// Writes a joint's local rotation vector into `out[0..3]`.
#[no_mangle]
pub unsafe extern "C" fn sp_session_rotation(s: *mut SpSession, joint_index: u32, out: *mut f64, len: usize) -> SpStatus {
    guard(|| {
        let s = session_mut(s)?;
        let j = joint(joint_index)?;
        out_slice(out, len, 3)?[..3].copy_from_slice(s.pose.rotation(j).as_slice());
        Ok(())
    })
}

/// Moves `effector` toward the world target by IK on the chain from the
/// pelvis; writes the remaining distance in meters to `error` when non-null.
///
/// # Safety
/// `error` must be null or point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn sp_session_solve_ik(
    s: *mut SpSession,
    effector: u32,
    x: f64,
    y: f64,
    z: f64,
    error: *mut f64,
) -> SpStatus {
    guard(|| {
        let s = session_mut(s)?;
        let req = IkRequest::new(joint(effector)?, Vector3::new(x, y, z));
        let r = solve_ik(&s.pose, &req, s.template).map_err(|e| (SpStatus::IkFailed, e.to_string()))?;
        s.pose = r.pose;
        if let Some(e) = error.as_mut() {
            *e = r.error;
        }
        Ok(())
    })
}

/// Current pose and primitive body as a JSON document. Free the result
/// with `sp_string_free`; null on failure.
#[no_mangle]
pub unsafe extern "C" fn sp_session_export_json(s: *mut SpSession) -> *mut c_char {
    let mut out = std::ptr::null_mut();
    let status = guard(|| {
        let s = session_mut(s)?;
        let body = fit_primitives(s.template, &s.pose).map_err(|e| (SpStatus::Internal, e.to_string()))?;
        let doc = serde_json::json!({ "pose": s.pose, "body": body, "joints2d": s.joints2d });
        out = CString::new(doc.to_string()).map_err(|e| (SpStatus::Internal, e.to_string()))?.into_raw();
        Ok(())
    });
    if status != SpStatus::Ok {
        return std::ptr::null_mut();
    }
    out
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `p` must come from `sp_session_export_json` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sp_string_free(p: *mut c_char) {
    if !p.is_null() {
        drop(CString::from_raw(p));
    }
}
