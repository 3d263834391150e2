//! Clean labeled vector sketches of a primitive body, ray-cast occlusion
//! ratings, silhouette masks and joint projection.

mod raycast;
mod silhouette;
mod strokes;
pub mod svg;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub use raycast::{contains_point, intersect_primitive, ray_cast, ray_cast_filtered, Hit};
pub use silhouette::{render_silhouette, Mask, RleError, RleMask};
pub use strokes::{MIN_CLOSED_NODES, NODE_SPACING_PX};

use crate::body_model::{
    forward_kinematics, JointId, ModelError, PartLabel, PerJoint, Pose, PrimitiveBody, Shape, SkeletonTemplate,
};
use crate::camera::{Camera, CameraError, Projector};

/// A node counts as occluded only when the blocking surface is at least
/// this much closer than the node (meters).
pub const OCCLUSION_DEPTH_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("unusable viewpoint: {0}")]
    Viewpoint(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineType {
    Silhouette,
    Contour,
    Crease,
    Border,
    FaceMark,
}

impl LineType {
    pub fn as_str(self) -> &'static str {
        match self {
            LineType::Silhouette => "silhouette",
            LineType::Contour => "contour",
            LineType::Crease => "crease",
            LineType::Border => "border",
            LineType::FaceMark => "face_mark",
        }
    }

    pub fn parse(s: &str) -> Option<LineType> {
        [LineType::Silhouette, LineType::Contour, LineType::Crease, LineType::Border, LineType::FaceMark]
            .into_iter()
            .find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeNode {
    /// Canvas position, pixels, y down.
    pub position: Vector2<f64>,
    /// Surface point the node was generated from (meters).
    pub source: Vector3<f64>,
    pub occluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub nodes: Vec<StrokeNode>,
    pub line_type: LineType,
    pub part: PartLabel,
    /// Fraction of occluded nodes.
    pub occlusion: f64,
    pub hidden: bool,
    /// Index of the generating primitive, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primitive: Option<usize>,
}

impl Stroke {
    pub fn points(&self) -> Vec<Vector2<f64>> {
        self.nodes.iter().map(|n| n.position).collect()
    }

    /// Recomputes the rating from the per-node flags.
    pub fn refresh_occlusion(&mut self) {
        let n = self.nodes.len();
        let v = self.nodes.iter().filter(|n| n.occluded).count();
        self.occlusion = if n == 0 { 0.0 } else { v as f64 / n as f64 };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<Camera>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorSketch {
    pub strokes: Vec<Stroke>,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl VectorSketch {
    pub fn visible_strokes(&self) -> impl Iterator<Item = &Stroke> {
        self.strokes.iter().filter(|s| !s.hidden)
    }

    pub fn hidden_count(&self) -> usize {
        self.strokes.iter().filter(|s| s.hidden).count()
    }

    pub fn max_occlusion(&self) -> f64 {
        self.strokes.iter().map(|s| s.occlusion).fold(0.0, f64::max)
    }

    /// Whether every node stays within a quarter canvas of the frame.
    pub fn within_canvas_margin(&self) -> bool {
        let (w, h) = (self.width as f64, self.height as f64);
        self.strokes.iter().flat_map(|s| &s.nodes).all(|n| {
            let p = n.position;
            p.x.is_finite()
                && p.y.is_finite()
                && p.x >= -0.25 * w
                && p.x <= 1.25 * w
                && p.y >= -0.25 * h
                && p.y <= 1.25 * h
        })
    }
}

fn check_viewpoint(body: &PrimitiveBody, camera: &Camera) -> Result<(), RenderError> {
    camera.validate()?;
    if body.is_empty() {
        return Ok(());
    }
    for prim in &body.primitives {
        if contains_point(prim, &camera.position) {
            return Err(RenderError::Viewpoint(format!("camera inside {}", prim.label)));
        }
        let (center, radius) = prim.bounding_sphere();
        if camera.depth(&center) <= radius {
            return Err(RenderError::Viewpoint(format!("{} is behind or around the camera", prim.label)));
        }
    }
    let centroid = body.primitives.iter().map(|p| p.bounding_sphere().0).sum::<Vector3<f64>>() / body.len() as f64;
    let c = camera.project(&centroid)?;
    if !(0.0..camera.width as f64).contains(&c.x) || !(0.0..camera.height as f64).contains(&c.y) {
        return Err(RenderError::Viewpoint("body centre is outside the canvas".into()));
    }
    Ok(())
}

/// Projects every primitive's outline into labeled strokes and rates
/// their occlusion.
pub fn render_sketch(body: &PrimitiveBody, camera: &Camera) -> Result<VectorSketch, RenderError> {
    check_viewpoint(body, camera)?;
    let projector = Projector::new(camera);
    let mut strokes = Vec::new();
    for (i, prim) in body.primitives.iter().enumerate() {
        let crease_ends = if prim.label.is_torso() { (false, true) } else { (false, false) };
        strokes.extend(strokes::primitive_strokes(prim, i, &camera.position, &projector, crease_ends)?);
    }
    for stroke in &mut strokes {
        mark_occluded_nodes(stroke, body, &camera.position);
    }
    let sketch = VectorSketch {
        strokes,
        width: camera.width,
        height: camera.height,
        provenance: Some(Provenance { pose_id: None, camera: Some(camera.clone()) }),
    };
    if !sketch.within_canvas_margin() {
        return Err(RenderError::Viewpoint("figure leaves the canvas".into()));
    }
    Ok(sketch)
}

fn owner_index(stroke: &Stroke, body: &PrimitiveBody) -> Option<usize> {
    stroke.primitive.filter(|&i| i < body.len()).or_else(|| {
        let label = if stroke.part == PartLabel::FaceMark { PartLabel::Head } else { stroke.part };
        body.primitives.iter().position(|p| p.label == label)
    })
}

/// Whether the node at `point`, drawn on primitive `owner`, is hidden
/// from `eye` by another unattached primitive.
pub fn node_occluded(point: &Vector3<f64>, owner: Option<usize>, body: &PrimitiveBody, eye: &Vector3<f64>) -> bool {
    let delta = point - eye;
    let dist = delta.norm();
    if dist <= 0.0 {
        return false;
    }
    let dir = delta / dist;
    body.primitives.iter().enumerate().any(|(k, prim)| {
        let may_occlude = match owner {
            Some(o) => body.can_occlude(k, o),
            None => true,
        };
        may_occlude && intersect_primitive(prim, eye, &dir).is_some_and(|t| t < dist - OCCLUSION_DEPTH_MARGIN)
    })
}

/// Face marks sit on the head's own surface and vanish when it faces away.
fn back_facing_on_owner(point: &Vector3<f64>, owner: usize, body: &PrimitiveBody, eye: &Vector3<f64>) -> bool {
    let prim = &body.primitives[owner];
    let Shape::Ellipsoid { semi_axes: s } = prim.shape else { return false };
    let l = prim.frame.to_local(point);
    let normal = prim.frame.orientation * Vector3::new(l.x / (s.x * s.x), l.y / (s.y * s.y), l.z / (s.z * s.z));
    normal.dot(&(eye - point)) < 0.0
}

fn mark_occluded_nodes(stroke: &mut Stroke, body: &PrimitiveBody, eye: &Vector3<f64>) {
    let owner = owner_index(stroke, body);
    let face = stroke.part == PartLabel::FaceMark;
    for node in &mut stroke.nodes {
        node.occluded = node_occluded(&node.source, owner, body, eye)
            || (face && owner.is_some_and(|o| back_facing_on_owner(&node.source, o, body, eye)));
    }
    stroke.refresh_occlusion();
}

/// Occlusion rating of a stroke: occluded nodes over total nodes.
pub fn occlusion_rating(stroke: &Stroke, body: &PrimitiveBody, camera: &Camera) -> f64 {
    let mut s = stroke.clone();
    mark_occluded_nodes(&mut s, body, &camera.position);
    s.occlusion
}

/// Pinhole projection of the posed skeleton's joints.
pub fn project_joints(
    template: &SkeletonTemplate,
    pose: &Pose,
    camera: &Camera,
) -> Result<PerJoint<Vector2<f64>>, RenderError> {
    let fk = forward_kinematics(template, pose)?;
    let projector = Projector::new(camera);
    let mut out = PerJoint::splat(Vector2::zeros());
    for j in JointId::ALL {
        out[j] = projector.project(&fk[j])?;
    }
    Ok(out)
}
