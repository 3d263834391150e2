use nalgebra::{Rotation3, Vector3};

use super::joint::PerJoint;
use super::pose::Pose;
use super::template::SkeletonTemplate;
use super::ModelError;

pub type JointPositions = PerJoint<Vector3<f64>>;

/// World position and world frame of every joint.
///
/// A joint's frame is its parent's frame composed with the joint's own
/// local rotation, so a joint rotation moves that joint's descendants.
#[derive(Debug, Clone)]
pub struct JointFrames {
    pub positions: JointPositions,
    pub rotations: PerJoint<Rotation3<f64>>,
}

pub fn forward_kinematics(template: &SkeletonTemplate, pose: &Pose) -> Result<JointPositions, ModelError> {
    Ok(forward_frames(template, pose)?.positions)
}

pub fn forward_frames(template: &SkeletonTemplate, pose: &Pose) -> Result<JointFrames, ModelError> {
    pose.validate()?;
    Ok(forward_frames_unchecked(template, pose))
}

/// FK without pose validation; used inside optimizer loops on poses that
/// are valid by construction.
pub(crate) fn forward_frames_unchecked(template: &SkeletonTemplate, pose: &Pose) -> JointFrames {
    let mut positions = PerJoint::splat(Vector3::zeros());
    let mut rotations = PerJoint::splat(Rotation3::identity());
    for &j in template.order() {
        match template.parent(j) {
            None => {
                positions[j] = pose.root_translation;
                rotations[j] = pose.root_orientation.to_rotation_matrix();
            }
            Some(p) => {
                positions[j] = positions[p] + rotations[p] * template.offsets[j];
                rotations[j] = rotations[p] * Rotation3::new(pose.rotation(j));
            }
        }
    }
    JointFrames { positions, rotations }
}

pub(crate) fn fk_unchecked(template: &SkeletonTemplate, pose: &Pose) -> JointPositions {
    forward_frames_unchecked(template, pose).positions
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use nalgebra::{Matrix4, UnitQuaternion};
    use proptest::prelude::*;

    use super::*;
    use crate::body_model::sampling::{sample_pose, SamplingConfig};
    use crate::body_model::JointId;

    fn template() -> &'static SkeletonTemplate {
        SkeletonTemplate::canonical()
    }

    #[test]
    fn identity_pose_root_at_origin() {
        let fk = forward_kinematics(template(), &Pose::identity()).unwrap();
        assert_eq!(fk[JointId::Pelvis], Vector3::zeros());
    }

    #[test]
    fn identity_pose_head_top_is_spine_sum() {
        // pelvis->spine_mid 0.15, ->chest 0.20, ->neck 0.10, ->head_top 0.25
        let h = 0.15 + 0.20 + 0.10 + 0.25;
        let fk = forward_kinematics(template(), &Pose::identity()).unwrap();
        assert!((fk[JointId::HeadTop] - Vector3::new(0.0, h, 0.0)).norm() < 1e-12);
    }

    fn translation(x: f64, y: f64, z: f64) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m[(0, 3)] = x;
        m[(1, 3)] = y;
        m[(2, 3)] = z;
        m
    }

    #[test]
    fn shoulder_rotation_matches_manual_transform_chain() {
        // 90 degrees about the forward (-z) axis.
        let mut pose = Pose::identity();
        pose.set_rotation_unclamped(JointId::RShoulder, Vector3::new(0.0, 0.0, -FRAC_PI_2));
        let fk = forward_kinematics(template(), &pose).unwrap();

        // Rotation about -z by 90 degrees: (x, y) -> (y, -x).
        #[rustfmt::skip]
        let rot = Matrix4::new(
            0.0, 1.0, 0.0, 0.0,
           -1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        let chest = translation(0.0, 0.15, 0.0) * translation(0.0, 0.20, 0.0);
        let shoulder = chest * translation(0.18, 0.0, 0.0) * rot;
        let elbow = shoulder * translation(0.28, 0.0, 0.0);
        let wrist = elbow * translation(0.26, 0.0, 0.0);
        let expected = Vector3::new(wrist[(0, 3)], wrist[(1, 3)], wrist[(2, 3)]);
        assert!((fk[JointId::RWrist] - expected).norm() < 1e-12, "{:?}", fk[JointId::RWrist]);

        let tpose = forward_kinematics(template(), &Pose::identity()).unwrap();
        let arm = tpose[JointId::RWrist] - tpose[JointId::RShoulder];
        let bent = fk[JointId::RWrist] - fk[JointId::RShoulder];
        assert!((arm.norm() - bent.norm()).abs() < 1e-12);
        assert!(arm.dot(&bent).abs() < 1e-12);
    }

    #[test]
    fn mirrored_pose_mirrors_positions() {
        let pose = sample_pose(17, &SamplingConfig::default(), template());
        let fk = forward_kinematics(template(), &pose).unwrap();
        let fm = forward_kinematics(template(), &pose.mirrored()).unwrap();
        for j in JointId::ALL {
            let p = fk[j.mirror()];
            assert!((fm[j] - Vector3::new(-p.x, p.y, p.z)).norm() < 1e-12, "{j}");
        }
    }

    #[test]
    fn non_unit_quaternion_is_rejected() {
        let mut pose = Pose::identity();
        pose.root_orientation = UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(2.0, 0.0, 0.0, 0.0));
        assert!(matches!(forward_kinematics(template(), &pose), Err(ModelError::MalformedPose(_))));
    }

    proptest! {
        #[test]
        fn bone_lengths_preserved(seed in any::<u64>()) {
            let t = template();
            let pose = sample_pose(seed, &SamplingConfig::default(), t);
            let fk = forward_kinematics(t, &pose).unwrap();
            for j in JointId::ALL.into_iter().skip(1) {
                let p = t.parent(j).unwrap();
                prop_assert!(((fk[j] - fk[p]).norm() - t.bone_length(j)).abs() < 1e-9);
            }
        }

        #[test]
        fn root_translation_commutes(seed in any::<u64>(), dx in -2.0..2.0f64, dy in -2.0..2.0f64, dz in -2.0..2.0f64) {
            let t = template();
            let pose = sample_pose(seed, &SamplingConfig::default(), t);
            let shift = Vector3::new(dx, dy, dz);
            let a = forward_kinematics(t, &pose.translated(&shift)).unwrap();
            let b = forward_kinematics(t, &pose).unwrap();
            for j in JointId::ALL {
                prop_assert!((a[j] - (b[j] + shift)).norm() < 1e-12);
            }
        }
    }
}
