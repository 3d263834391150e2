use std::fmt;
use std::str::FromStr;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::fk::{forward_frames, JointFrames, JointPositions};
use super::joint::JointId;
use super::pose::Pose;
use super::template::SkeletonTemplate;
use super::ModelError;

/// Lateral head width, fitted between the ears.
pub const EAR_WIDTH: f64 = 0.15;
/// Front-to-back head depth.
pub const HEAD_DEPTH: f64 = 0.19;
/// Radius of both torso cylinders where they meet at the spine.
pub const WAIST_RADIUS: f64 = 0.095;
/// Joint sphere radius relative to the adjoining cylinder's base radius.
pub const SPHERE_SCALE: f64 = 1.1;

/// Base and tip radii of the limb cylinders (meters).
const UPPER_ARM_RADII: (f64, f64) = (0.050, 0.042);
const FOREARM_RADII: (f64, f64) = (0.042, 0.032);
const THIGH_RADII: (f64, f64) = (0.080, 0.060);
const SHIN_RADII: (f64, f64) = (0.058, 0.042);

/// Semantic body part carried by every primitive and every stroke.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PartLabel {
    Head,
    Neck,
    UpperTorso,
    LowerTorso,
    LUpperArm,
    RUpperArm,
    LForearm,
    RForearm,
    LThigh,
    RThigh,
    LShin,
    RShin,
    JointSphere(JointId),
    FaceMark,
}

impl PartLabel {
    /// Limb parts with their (proximal, distal) joints.
    pub const LIMBS: [(PartLabel, JointId, JointId); 8] = [
        (PartLabel::LUpperArm, JointId::LShoulder, JointId::LElbow),
        (PartLabel::RUpperArm, JointId::RShoulder, JointId::RElbow),
        (PartLabel::LForearm, JointId::LElbow, JointId::LWrist),
        (PartLabel::RForearm, JointId::RElbow, JointId::RWrist),
        (PartLabel::LThigh, JointId::LHip, JointId::LKnee),
        (PartLabel::RThigh, JointId::RHip, JointId::RKnee),
        (PartLabel::LShin, JointId::LKnee, JointId::LAnkle),
        (PartLabel::RShin, JointId::RKnee, JointId::RAnkle),
    ];

    pub fn limb_joints(self) -> Option<(JointId, JointId)> {
        Self::LIMBS.iter().find(|(p, _, _)| *p == self).map(|&(_, a, b)| (a, b))
    }

    pub fn limb_between(a: JointId, b: JointId) -> Option<PartLabel> {
        Self::LIMBS
            .iter()
            .find(|(_, x, y)| (*x == a && *y == b) || (*x == b && *y == a))
            .map(|(p, _, _)| *p)
    }

    pub fn is_limb(self) -> bool {
        self.limb_joints().is_some()
    }

    pub fn is_torso(self) -> bool {
        matches!(self, PartLabel::UpperTorso | PartLabel::LowerTorso)
    }

    /// Coarse part class: joints, limbs, torso, head (with neck and face).
    pub fn group(self) -> PartGroup {
        match self {
            PartLabel::JointSphere(_) => PartGroup::Joint,
            PartLabel::UpperTorso | PartLabel::LowerTorso => PartGroup::Torso,
            PartLabel::Head | PartLabel::Neck | PartLabel::FaceMark => PartGroup::Head,
            _ => PartGroup::Limb,
        }
    }

    /// Joints whose 2D evidence disappears when this part is not drawn.
    pub fn evidence_joints(self) -> Vec<JointId> {
        match self {
            PartLabel::JointSphere(j) => vec![j],
            PartLabel::Head | PartLabel::Neck => vec![JointId::Neck, JointId::HeadTop],
            // Face marks carry head orientation, not joint positions.
            PartLabel::FaceMark => vec![],
            PartLabel::UpperTorso => vec![JointId::SpineMid, JointId::Chest],
            PartLabel::LowerTorso => vec![JointId::Pelvis, JointId::SpineMid],
            limb => {
                let (a, b) = limb.limb_joints().expect("limb part");
                vec![a, b]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartGroup {
    Joint,
    Limb,
    Torso,
    Head,
}

impl fmt::Display for PartLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PartLabel::Head => "head",
            PartLabel::Neck => "neck",
            PartLabel::UpperTorso => "upper_torso",
            PartLabel::LowerTorso => "lower_torso",
            PartLabel::LUpperArm => "l_upper_arm",
            PartLabel::RUpperArm => "r_upper_arm",
            PartLabel::LForearm => "l_forearm",
            PartLabel::RForearm => "r_forearm",
            PartLabel::LThigh => "l_thigh",
            PartLabel::RThigh => "r_thigh",
            PartLabel::LShin => "l_shin",
            PartLabel::RShin => "r_shin",
            PartLabel::FaceMark => "face_mark",
            PartLabel::JointSphere(j) => return write!(f, "joint_sphere:{j}"),
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown part label `{0}`")]
pub struct UnknownPart(pub String);

impl FromStr for PartLabel {
    type Err = UnknownPart;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(joint) = s.strip_prefix("joint_sphere:") {
            return joint.parse().map(PartLabel::JointSphere).map_err(|_| UnknownPart(s.into()));
        }
        Ok(match s {
            "head" => PartLabel::Head,
            "neck" => PartLabel::Neck,
            "upper_torso" => PartLabel::UpperTorso,
            "lower_torso" => PartLabel::LowerTorso,
            "l_upper_arm" => PartLabel::LUpperArm,
            "r_upper_arm" => PartLabel::RUpperArm,
            "l_forearm" => PartLabel::LForearm,
            "r_forearm" => PartLabel::RForearm,
            "l_thigh" => PartLabel::LThigh,
            "r_thigh" => PartLabel::RThigh,
            "l_shin" => PartLabel::LShin,
            "r_shin" => PartLabel::RShin,
            "face_mark" => PartLabel::FaceMark,
            _ => return Err(UnknownPart(s.into())),
        })
    }
}

impl Serialize for PartLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PartLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rigid placement of a primitive's local frame in the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Frame {
    pub fn at(position: Vector3<f64>) -> Self {
        Frame { position, orientation: UnitQuaternion::identity() }
    }

    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse_transform_vector(&(p - self.position))
    }

    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * p + self.position
    }
}

/// Shape dimensions in the primitive's local frame.
///
/// Ellipsoids and spheres are centred on the frame origin. A tapered
/// cylinder has its base disc at the origin and its axis along local +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ellipsoid { semi_axes: Vector3<f64> },
    TaperedCylinder { base_radius: f64, tip_radius: f64, length: f64 },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub frame: Frame,
    pub label: PartLabel,
    /// Skeleton joints this primitive touches; primitives sharing a joint
    /// are treated as attached and never occlude each other.
    #[serde(default)]
    pub attached: Vec<JointId>,
}

impl Primitive {
    pub fn sphere(center: Vector3<f64>, radius: f64, label: PartLabel) -> Self {
        Primitive { shape: Shape::Sphere { radius }, frame: Frame::at(center), label, attached: vec![] }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = match self.shape {
            Shape::Ellipsoid { semi_axes } => semi_axes.iter().all(|&a| a > 0.0),
            Shape::Sphere { radius } => radius > 0.0,
            Shape::TaperedCylinder { base_radius, tip_radius, length } => {
                tip_radius > 0.0 && base_radius >= tip_radius && length > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::DegeneratePrimitive(format!("{} has invalid dimensions", self.label)))
        }
    }

    /// World-space endpoints of a cylinder's axis.
    pub fn axis_endpoints(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        match self.shape {
            Shape::TaperedCylinder { length, .. } => {
                Some((self.frame.position, self.frame.to_world(&Vector3::new(0.0, length, 0.0))))
            }
            _ => None,
        }
    }

    pub fn surface_area(&self) -> f64 {
        use std::f64::consts::PI;
        match self.shape {
            Shape::Sphere { radius } => 4.0 * PI * radius * radius,
            Shape::Ellipsoid { semi_axes: s } => {
                // Knud Thomsen's approximation, relative error below 1.1%.
                let p = 1.6075;
                let t = ((s.x * s.y).powf(p) + (s.x * s.z).powf(p) + (s.y * s.z).powf(p)) / 3.0;
                4.0 * PI * t.powf(1.0 / p)
            }
            Shape::TaperedCylinder { base_radius: r0, tip_radius: r1, length } => {
                let slant = (length * length + (r0 - r1).powi(2)).sqrt();
                PI * (r0 + r1) * slant + PI * (r0 * r0 + r1 * r1)
            }
        }
    }

    /// Signed distance-like residual of the implicit surface, 0 on the surface.
    pub fn surface_residual(&self, p: &Vector3<f64>) -> f64 {
        let l = self.frame.to_local(p);
        match self.shape {
            Shape::Sphere { radius } => l.norm() - radius,
            Shape::Ellipsoid { semi_axes: s } => Vector3::new(l.x / s.x, l.y / s.y, l.z / s.z).norm() - 1.0,
            Shape::TaperedCylinder { base_radius: r0, tip_radius: r1, length } => {
                let radial = (l.x * l.x + l.z * l.z).sqrt();
                let t = l.y / length;
                let side = if (-1e-9..=1.0 + 1e-9).contains(&t) { (radial - (r0 + (r1 - r0) * t)).abs() } else { f64::INFINITY };
                let base = if radial <= r0 { l.y.abs() } else { f64::INFINITY };
                let tip = if radial <= r1 { (l.y - length).abs() } else { f64::INFINITY };
                side.min(base).min(tip)
            }
        }
    }

    /// Centre and radius of a sphere that bounds the primitive.
    pub fn bounding_sphere(&self) -> (Vector3<f64>, f64) {
        match self.shape {
            Shape::Sphere { radius } => (self.frame.position, radius),
            Shape::Ellipsoid { semi_axes } => (self.frame.position, semi_axes.max()),
            Shape::TaperedCylinder { base_radius, length, .. } => {
                let center = self.frame.to_world(&Vector3::new(0.0, length / 2.0, 0.0));
                (center, (length * length / 4.0 + base_radius * base_radius).sqrt())
            }
        }
    }

    pub fn is_attached_to(&self, other: &Primitive) -> bool {
        self.attached.iter().any(|j| other.attached.contains(j))
    }
}

/// The posed primitive mannequin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveBody {
    pub primitives: Vec<Primitive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Pose>,
    #[serde(default)]
    pub template: String,
}

impl PrimitiveBody {
    pub fn from_primitives(primitives: Vec<Primitive>) -> Self {
        PrimitiveBody { primitives, pose: None, template: String::new() }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn find(&self, label: PartLabel) -> Option<&Primitive> {
        self.primitives.iter().find(|p| p.label == label)
    }

    /// Whether primitive `a` may hide strokes of primitive `b`.
    pub fn can_occlude(&self, occluder: usize, owner: usize) -> bool {
        occluder != owner && !self.primitives[occluder].is_attached_to(&self.primitives[owner])
    }

    pub fn without(&self, label: PartLabel) -> PrimitiveBody {
        PrimitiveBody {
            primitives: self.primitives.iter().filter(|p| p.label != label).cloned().collect(),
            ..self.clone()
        }
    }

    pub fn count_by_kind(&self) -> (usize, usize, usize) {
        self.primitives.iter().fold((0, 0, 0), |(e, c, s), p| match p.shape {
            Shape::Ellipsoid { .. } => (e + 1, c, s),
            Shape::TaperedCylinder { .. } => (e, c + 1, s),
            Shape::Sphere { .. } => (e, c, s + 1),
        })
    }
}

fn align_y_to(dir: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::rotation_between(&Vector3::y(), dir)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI))
}

fn frame_rotation(frames: &JointFrames, j: JointId) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&frames.rotations[j])
}

/// Cylinder spanning `from` to `to`, where one of them is the parent of
/// the other; the frame twist follows the parent joint.
fn cylinder(
    template: &SkeletonTemplate,
    frames: &JointFrames,
    from: JointId,
    to: JointId,
    radii: (f64, f64),
    label: PartLabel,
    attached: Vec<JointId>,
) -> Result<Primitive, ModelError> {
    let (parent, child, reversed) = if template.parent(to) == Some(from) {
        (from, to, false)
    } else if template.parent(from) == Some(to) {
        (to, from, true)
    } else {
        return Err(ModelError::DegeneratePrimitive(format!("{from} and {to} are not adjacent")));
    };
    let local_dir = template.offsets[child].normalize();
    let local_dir = if reversed { -local_dir } else { local_dir };
    let base = frames.positions[from];
    let length = (frames.positions[to] - base).norm();
    if !(length > 1e-9) {
        return Err(ModelError::DegeneratePrimitive(format!("{label}: coincident joints {from} and {to}")));
    }
    let orientation = frame_rotation(frames, parent) * align_y_to(&local_dir);
    let prim = Primitive {
        shape: Shape::TaperedCylinder { base_radius: radii.0, tip_radius: radii.1, length },
        frame: Frame { position: base, orientation },
        label,
        attached,
    };
    prim.validate()?;
    Ok(prim)
}

/// Places the head ellipsoid, torso and limb cylinders and joint spheres
/// on the posed skeleton.
pub fn fit_primitives(template: &SkeletonTemplate, pose: &Pose) -> Result<PrimitiveBody, ModelError> {
    let frames = forward_frames(template, pose)?;
    fit_primitives_to_frames(template, pose, &frames)
}

fn fit_primitives_to_frames(
    template: &SkeletonTemplate,
    pose: &Pose,
    frames: &JointFrames,
) -> Result<PrimitiveBody, ModelError> {
    use JointId::*;
    let p: &JointPositions = &frames.positions;
    let mut prims = Vec::with_capacity(23);

    let head_len = (p[HeadTop] - p[Neck]).norm();
    if !(head_len > 1e-9) {
        return Err(ModelError::DegeneratePrimitive("head: coincident neck and head_top".into()));
    }
    prims.push(Primitive {
        shape: Shape::Ellipsoid { semi_axes: Vector3::new(EAR_WIDTH / 2.0, head_len / 2.0, HEAD_DEPTH / 2.0) },
        frame: Frame {
            position: (p[Neck] + p[HeadTop]) / 2.0,
            orientation: frame_rotation(frames, Neck) * align_y_to(&template.offsets[HeadTop].normalize()),
        },
        label: PartLabel::Head,
        attached: vec![Neck, HeadTop],
    });

    let hip_half_width = (p[LHip] - p[RHip]).norm() / 2.0;
    let shoulder_half_width = (p[LShoulder] - p[RShoulder]).norm() / 2.0;
    prims.push(cylinder(
        template,
        frames,
        Pelvis,
        SpineMid,
        (hip_half_width, WAIST_RADIUS.min(hip_half_width)),
        PartLabel::LowerTorso,
        vec![Pelvis, SpineMid, LHip, RHip],
    )?);
    prims.push(cylinder(
        template,
        frames,
        Chest,
        SpineMid,
        (shoulder_half_width, WAIST_RADIUS.min(shoulder_half_width)),
        PartLabel::UpperTorso,
        vec![SpineMid, Chest, Neck, LShoulder, RShoulder],
    )?);

    for &(label, a, b) in &PartLabel::LIMBS {
        prims.push(cylinder(template, frames, a, b, limb_radii(label), label, vec![a, b])?);
    }

    for j in JointId::LIMB_CHAIN {
        let mut sphere = Primitive::sphere(p[j], SPHERE_SCALE * adjoining_radius(j), PartLabel::JointSphere(j));
        sphere.frame.orientation = frame_rotation(frames, j);
        sphere.attached = vec![j];
        prims.push(sphere);
    }

    Ok(PrimitiveBody { primitives: prims, pose: Some(pose.clone()), template: template.name.clone() })
}

fn limb_radii(label: PartLabel) -> (f64, f64) {
    match label {
        PartLabel::LUpperArm | PartLabel::RUpperArm => UPPER_ARM_RADII,
        PartLabel::LForearm | PartLabel::RForearm => FOREARM_RADII,
        PartLabel::LThigh | PartLabel::RThigh => THIGH_RADII,
        _ => SHIN_RADII,
    }
}

/// Base radius of the cylinder starting at `j`, or the tip radius of the
/// one ending there for the chain ends.
fn adjoining_radius(j: JointId) -> f64 {
    use JointId::*;
    match j {
        LShoulder | RShoulder => UPPER_ARM_RADII.0,
        LElbow | RElbow => FOREARM_RADII.0,
        LWrist | RWrist => FOREARM_RADII.1,
        LHip | RHip => THIGH_RADII.0,
        LKnee | RKnee => SHIN_RADII.0,
        _ => SHIN_RADII.1,
    }
}

/// Rotation mapping local +y to the given world direction.
pub fn rotation_to_axis(dir: &Vector3<f64>) -> Rotation3<f64> {
    align_y_to(dir).to_rotation_matrix()
}
