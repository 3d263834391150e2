use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const JOINT_COUNT: usize = 17;

/// Joints of the fixed-shape skeleton.
///
/// The discriminant order is topological: every joint's parent has a
/// smaller index than the joint itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum JointId {
    Pelvis = 0,
    SpineMid,
    Chest,
    Neck,
    HeadTop,
    LShoulder,
    RShoulder,
    LElbow,
    RElbow,
    LWrist,
    RWrist,
    LHip,
    RHip,
    LKnee,
    RKnee,
    LAnkle,
    RAnkle,
}

use JointId::*;

impl JointId {
    pub const ALL: [JointId; JOINT_COUNT] = [
        Pelvis, SpineMid, Chest, Neck, HeadTop, LShoulder, RShoulder, LElbow, RElbow, LWrist,
        RWrist, LHip, RHip, LKnee, RKnee, LAnkle, RAnkle,
    ];

    /// The 12 limb-chain joints that carry a joint sphere.
    pub const LIMB_CHAIN: [JointId; 12] = [
        LShoulder, RShoulder, LElbow, RElbow, LWrist, RWrist, LHip, RHip, LKnee, RKnee, LAnkle,
        RAnkle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<JointId> {
        Self::ALL.get(i).copied()
    }

    /// Parent in the canonical topology.
    pub fn canonical_parent(self) -> Option<JointId> {
        Some(match self {
            Pelvis => return None,
            SpineMid => Pelvis,
            Chest => SpineMid,
            Neck => Chest,
            HeadTop => Neck,
            LShoulder | RShoulder => Chest,
            LElbow => LShoulder,
            RElbow => RShoulder,
            LWrist => LElbow,
            RWrist => RElbow,
            LHip | RHip => Pelvis,
            LKnee => LHip,
            RKnee => RHip,
            LAnkle => LKnee,
            RAnkle => RKnee,
        })
    }

    /// Counterpart across the sagittal plane.
    pub fn mirror(self) -> JointId {
        match self {
            LShoulder => RShoulder,
            RShoulder => LShoulder,
            LElbow => RElbow,
            RElbow => LElbow,
            LWrist => RWrist,
            RWrist => LWrist,
            LHip => RHip,
            RHip => LHip,
            LKnee => RKnee,
            RKnee => LKnee,
            LAnkle => RAnkle,
            RAnkle => LAnkle,
            other => other,
        }
    }

    pub fn is_left(self) -> bool {
        matches!(self, LShoulder | LElbow | LWrist | LHip | LKnee | LAnkle)
    }

    pub fn is_right(self) -> bool {
        self.mirror() != self && !self.is_left()
    }

    pub fn name(self) -> &'static str {
        match self {
            Pelvis => "pelvis",
            SpineMid => "spine_mid",
            Chest => "chest",
            Neck => "neck",
            HeadTop => "head_top",
            LShoulder => "l_shoulder",
            RShoulder => "r_shoulder",
            LElbow => "l_elbow",
            RElbow => "r_elbow",
            LWrist => "l_wrist",
            RWrist => "r_wrist",
            LHip => "l_hip",
            RHip => "r_hip",
            LKnee => "l_knee",
            RKnee => "r_knee",
            LAnkle => "l_ankle",
            RAnkle => "r_ankle",
        }
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown joint name `{0}`")]
pub struct UnknownJoint(pub String);

impl FromStr for JointId {
    type Err = UnknownJoint;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|j| j.name() == s)
            .ok_or_else(|| UnknownJoint(s.to_string()))
    }
}

/// A value per joint, indexed by [`JointId`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerJoint<T>(pub [T; JOINT_COUNT]);

impl<T: Copy> PerJoint<T> {
    pub fn splat(value: T) -> Self {
        PerJoint([value; JOINT_COUNT])
    }
}

impl<T> PerJoint<T> {
    pub fn from_fn(mut f: impl FnMut(JointId) -> T) -> Self {
        PerJoint(std::array::from_fn(|i| f(JointId::ALL[i])))
    }

    pub fn iter(&self) -> impl Iterator<Item = (JointId, &T)> {
        JointId::ALL.iter().copied().zip(self.0.iter())
    }
}

impl<T> std::ops::Index<JointId> for PerJoint<T> {
    type Output = T;
    fn index(&self, j: JointId) -> &T {
        &self.0[j.index()]
    }
}

impl<T> std::ops::IndexMut<JointId> for PerJoint<T> {
    fn index_mut(&mut self, j: JointId) -> &mut T {
        &mut self.0[j.index()]
    }
}

/// Serialized as a map from joint name to value, in topological order.
impl<T: Serialize> Serialize for PerJoint<T> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(JOINT_COUNT))?;
        for (j, v) in self.iter() {
            map.serialize_entry(j.name(), v)?;
        }
        map.end()
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for PerJoint<T> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let mut map = std::collections::BTreeMap::<JointId, T>::deserialize(deserializer)?;
        let mut values = Vec::with_capacity(JOINT_COUNT);
        for j in JointId::ALL {
            let v = map.remove(&j).ok_or_else(|| serde::de::Error::custom(format!("missing joint `{j}`")))?;
            values.push(v);
        }
        match values.try_into() {
            Ok(arr) => Ok(PerJoint(arr)),
            Err(_) => unreachable!("exactly one value per joint"),
        }
    }
}
