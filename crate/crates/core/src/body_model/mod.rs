//! Fixed-shape articulated skeleton, forward kinematics, pose sampling and
//! the primitive mannequin fitted to a posed skeleton.

mod fk;
mod joint;
mod pose;
mod primitives;
mod sampling;
mod surface;
mod template;

pub use fk::{forward_frames, forward_kinematics, JointFrames, JointPositions};
pub(crate) use fk::{fk_unchecked, forward_frames_unchecked};
pub use joint::{JointId, PerJoint, UnknownJoint, JOINT_COUNT};
pub use pose::Pose;
pub use primitives::{
    fit_primitives, rotation_to_axis, Frame, PartGroup, PartLabel, Primitive, PrimitiveBody, Shape, UnknownPart,
    EAR_WIDTH, HEAD_DEPTH, SPHERE_SCALE, WAIST_RADIUS,
};
pub use sampling::{sample_pose, sample_pose_with, SamplingConfig};
pub use surface::{sample_surface_points, SurfacePoint};
pub use template::{JointLimits, SkeletonTemplate, TEMPLATE_FORMAT};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("malformed pose: {0}")]
    MalformedPose(String),
    #[error("degenerate primitive: {0}")]
    DegeneratePrimitive(String),
    #[error("skeleton config: {0}")]
    Config(String),
}
