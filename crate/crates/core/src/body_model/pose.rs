use std::collections::BTreeMap;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::joint::{JointId, PerJoint};
use super::template::SkeletonTemplate;
use super::ModelError;

const QUATERNION_TOLERANCE: f64 = 1e-9;

/// Root transform plus a local rotation vector (axis times angle, radians)
/// for every non-root joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRecord", into = "PoseRecord")]
pub struct Pose {
    pub root_translation: Vector3<f64>,
    pub root_orientation: UnitQuaternion<f64>,
    rotations: PerJoint<Vector3<f64>>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    /// Rest rotations with the root at the origin.
    pub fn identity() -> Self {
        Pose {
            root_translation: Vector3::zeros(),
            root_orientation: UnitQuaternion::identity(),
            rotations: PerJoint::splat(Vector3::zeros()),
        }
    }

    /// Rest rotations with the figure standing on the ground plane.
    pub fn standing(template: &SkeletonTemplate) -> Self {
        Pose {
            root_translation: Vector3::new(0.0, template.standing_pelvis_height(), 0.0),
            ..Pose::identity()
        }
    }

    /// Builds a pose from an explicit rotation map; every non-root joint must be present.
    pub fn from_rotations(
        root_translation: Vector3<f64>,
        root_orientation: UnitQuaternion<f64>,
        rotations: &BTreeMap<JointId, Vector3<f64>>,
    ) -> Result<Self, ModelError> {
        let mut pose = Pose { root_translation, root_orientation, ..Pose::identity() };
        for j in JointId::ALL.into_iter().skip(1) {
            let r = rotations
                .get(&j)
                .ok_or_else(|| ModelError::MalformedPose(format!("missing rotation for `{j}`")))?;
            pose.rotations[j] = *r;
        }
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = self.root_translation.iter().all(|v| v.is_finite())
            && self.root_orientation.coords.iter().all(|v| v.is_finite())
            && self.rotations.0.iter().all(|r| r.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(ModelError::MalformedPose("non-finite value".into()));
        }
        let norm = self.root_orientation.quaternion().norm();
        if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
            return Err(ModelError::MalformedPose(format!("root quaternion norm {norm}")));
        }
        if self.rotations[JointId::Pelvis] != Vector3::zeros() {
            return Err(ModelError::MalformedPose("the root rotation lives in root_orientation".into()));
        }
        Ok(())
    }

    pub fn rotation(&self, j: JointId) -> Vector3<f64> {
        self.rotations[j]
    }

    /// Stores `r` without clamping. The root entry is ignored.
    pub fn set_rotation_unclamped(&mut self, j: JointId, r: Vector3<f64>) {
        if j != JointId::Pelvis {
            self.rotations[j] = r;
        }
    }

    pub fn rotations(&self) -> impl Iterator<Item = (JointId, Vector3<f64>)> + '_ {
        JointId::ALL.into_iter().skip(1).map(|j| (j, self.rotations[j]))
    }

    pub fn max_limit_violation(&self, template: &SkeletonTemplate) -> f64 {
        self.rotations().map(|(j, r)| template.limits[j].violation(&r)).fold(0.0, f64::max)
    }

    pub fn is_limit_respecting(&self, template: &SkeletonTemplate, tol: f64) -> bool {
        self.max_limit_violation(template) <= tol
    }

    pub fn clamp_to_limits(&mut self, template: &SkeletonTemplate) {
        for j in JointId::ALL.into_iter().skip(1) {
            self.rotations[j] = template.limits[j].clamp(&self.rotations[j]);
        }
    }

    pub fn clamped(mut self, template: &SkeletonTemplate) -> Self {
        self.clamp_to_limits(template);
        self
    }

    pub fn translated(&self, t: &Vector3<f64>) -> Self {
        Pose { root_translation: self.root_translation + t, ..self.clone() }
    }

    /// Reflection across the sagittal (x = 0) plane with left and right swapped.
    pub fn mirrored(&self) -> Self {
        let q = self.root_orientation.quaternion();
        let root_orientation =
            UnitQuaternion::new_unchecked(Quaternion::new(q.w, q.i, -q.j, -q.k));
        let t = self.root_translation;
        Pose {
            root_translation: Vector3::new(-t.x, t.y, t.z),
            root_orientation,
            rotations: PerJoint::from_fn(|j| {
                let r = self.rotations[j.mirror()];
                Vector3::new(r.x, -r.y, -r.z)
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseRecord {
    root_translation: [f64; 3],
    /// `[w, x, y, z]`
    root_orientation: [f64; 4],
    rotations: BTreeMap<JointId, [f64; 3]>,
}

impl TryFrom<PoseRecord> for Pose {
    type Error = ModelError;

    fn try_from(rec: PoseRecord) -> Result<Self, Self::Error> {
        let [w, x, y, z] = rec.root_orientation;
        let q = Quaternion::new(w, x, y, z);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(ModelError::MalformedPose(format!("root quaternion norm {}", q.norm())));
        }
        let rotations = rec.rotations.into_iter().map(|(j, r)| (j, Vector3::from(r))).collect();
        Pose::from_rotations(
            Vector3::from(rec.root_translation),
            UnitQuaternion::from_quaternion(q),
            &rotations,
        )
    }
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        let q = p.root_orientation.quaternion();
        PoseRecord {
            root_translation: p.root_translation.into(),
            root_orientation: [q.w, q.i, q.j, q.k],
            rotations: p.rotations().map(|(j, r)| (j, r.into())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_rotation_is_malformed() {
        let mut map: BTreeMap<_, _> =
            JointId::ALL.into_iter().skip(1).map(|j| (j, Vector3::zeros())).collect();
        map.remove(&JointId::LKnee);
        let err = Pose::from_rotations(Vector3::zeros(), UnitQuaternion::identity(), &map).unwrap_err();
        assert!(matches!(err, ModelError::MalformedPose(m) if m.contains("l_knee")));
    }

    #[test]
    fn json_round_trip_and_rejection() {
        let mut pose = Pose::standing(SkeletonTemplate::canonical());
        pose.set_rotation_unclamped(JointId::RElbow, Vector3::new(0.0, 1.0, 0.0));
        let text = serde_json::to_string(&pose).unwrap();
        let back: Pose = serde_json::from_str(&text).unwrap();
        assert_eq!(back, pose);

        let bad = text.replace("\"l_knee\"", "\"l_knee_typo\"");
        assert!(serde_json::from_str::<Pose>(&bad).is_err());
    }

    #[test]
    fn clamp_respects_limits() {
        let t = SkeletonTemplate::canonical();
        let mut pose = Pose::identity();
        pose.set_rotation_unclamped(JointId::RElbow, Vector3::new(0.3, 200f64.to_radians(), 0.0));
        assert!(!pose.is_limit_respecting(t, 1e-9));
        pose.clamp_to_limits(t);
        assert!(pose.is_limit_respecting(t, 0.0));
        assert!((pose.rotation(JointId::RElbow).y - 150f64.to_radians()).abs() < 1e-12);
        assert_eq!(pose.rotation(JointId::RElbow).x, 0.0);
    }

    #[test]
    fn mirror_is_involution() {
        let mut pose = Pose::identity();
        pose.root_orientation = UnitQuaternion::from_euler_angles(0.1, 0.4, -0.2);
        pose.set_rotation_unclamped(JointId::LShoulder, Vector3::new(0.1, -0.2, 0.3));
        let back = pose.mirrored().mirrored();
        assert!((back.root_orientation.coords - pose.root_orientation.coords).norm() < 1e-15);
        assert_eq!(back.rotation(JointId::LShoulder), pose.rotation(JointId::LShoulder));
    }
}
