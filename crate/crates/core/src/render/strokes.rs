//! Analytic outline curves of the primitive family, sampled into strokes.

use nalgebra::{Vector2, Vector3};

use super::{LineType, Stroke, StrokeNode};
use crate::body_model::{PartLabel, Primitive, Shape};
use crate::camera::{CameraError, Projector};

/// Target spacing between stroke nodes along the projected curve (px).
pub const NODE_SPACING_PX: f64 = 4.0;
pub const MIN_CLOSED_NODES: usize = 8;
pub const MIN_OPEN_NODES: usize = 4;

/// Dense parameter samples used to measure projected arc length.
const DENSE_SAMPLES: usize = 256;

/// Eye-line elevation and half-width, and nose-line extent, as angles on
/// the head's unit sphere.
const EYE_ELEVATION: f64 = 0.15;
const EYE_HALF_WIDTH: f64 = 0.45;
const NOSE_RANGE: (f64, f64) = (-0.3, 0.15);

/// Samples a parametric 3D curve on `[0, 1]` at roughly uniform projected spacing.
fn sample_curve(
    curve: impl Fn(f64) -> Vector3<f64>,
    closed: bool,
    projector: &Projector,
) -> Result<Vec<StrokeNode>, CameraError> {
    let mut params = Vec::with_capacity(DENSE_SAMPLES + 1);
    let mut lengths = Vec::with_capacity(DENSE_SAMPLES + 1);
    let mut prev: Option<Vector2<f64>> = None;
    let mut total = 0.0;
    for i in 0..=DENSE_SAMPLES {
        let s = i as f64 / DENSE_SAMPLES as f64;
        let px = projector.project(&curve(s))?;
        if let Some(p) = prev {
            total += (px - p).norm();
        }
        prev = Some(px);
        params.push(s);
        lengths.push(total);
    }
    let min_nodes = if closed { MIN_CLOSED_NODES } else { MIN_OPEN_NODES };
    let segments = ((total / NODE_SPACING_PX).ceil() as usize).max(min_nodes - usize::from(!closed));
    let node_count = if closed { segments } else { segments + 1 };

    let mut nodes = Vec::with_capacity(node_count + 1);
    let mut cursor = 0;
    for i in 0..node_count {
        let target = total * i as f64 / segments as f64;
        while cursor + 1 < lengths.len() - 1 && lengths[cursor + 1] < target {
            cursor += 1;
        }
        let (l0, l1) = (lengths[cursor], lengths[cursor + 1]);
        let f = if l1 > l0 { ((target - l0) / (l1 - l0)).clamp(0.0, 1.0) } else { 0.0 };
        let s = params[cursor] + f * (params[cursor + 1] - params[cursor]);
        let source = curve(s);
        nodes.push(StrokeNode { position: projector.project(&source)?, source, occluded: false });
    }
    if closed {
        let first = nodes[0].clone();
        nodes.push(first);
    }
    Ok(nodes)
}

fn stroke(nodes: Vec<StrokeNode>, line_type: LineType, part: PartLabel, primitive: usize) -> Stroke {
    Stroke { nodes, line_type, part, occlusion: 0.0, hidden: false, primitive: Some(primitive) }
}

/// Unit vectors spanning the plane orthogonal to `w`.
fn orthonormal_pair(w: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if w.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let a = w.cross(&helper).normalize();
    let b = w.cross(&a);
    (a, b)
}

/// Occluding contour of the unit sphere seen from local eye `e` (|e| > 1).
fn unit_sphere_contour(e: &Vector3<f64>) -> impl Fn(f64) -> Vector3<f64> {
    let d = e.norm();
    let w = e / d;
    let center = w / d;
    let radius = (d * d - 1.0).sqrt() / d;
    let (a, b) = orthonormal_pair(&w);
    move |s: f64| {
        let (sin, cos) = (s * std::f64::consts::TAU).sin_cos();
        center + (a * cos + b * sin) * radius
    }
}

pub(crate) fn primitive_strokes(
    prim: &Primitive,
    index: usize,
    eye: &Vector3<f64>,
    projector: &Projector,
    crease_ends: (bool, bool),
) -> Result<Vec<Stroke>, CameraError> {
    let mut out = Vec::new();
    match prim.shape {
        Shape::Sphere { radius } => {
            let e = prim.frame.to_local(eye) / radius;
            let contour = unit_sphere_contour(&e);
            let nodes = sample_curve(|s| prim.frame.to_world(&(contour(s) * radius)), true, projector)?;
            out.push(stroke(nodes, LineType::Contour, prim.label, index));
        }
        Shape::Ellipsoid { semi_axes } => {
            let e = prim.frame.to_local(eye).component_div(&semi_axes);
            let contour = unit_sphere_contour(&e);
            let nodes =
                sample_curve(|s| prim.frame.to_world(&contour(s).component_mul(&semi_axes)), true, projector)?;
            out.push(stroke(nodes, LineType::Contour, prim.label, index));
            if prim.label == PartLabel::Head {
                out.extend(face_marks(prim, index, &semi_axes, projector)?);
            }
        }
        Shape::TaperedCylinder { base_radius: r0, tip_radius: r1, length } => {
            let q = prim.frame.to_local(eye);
            let k = (r1 - r0) / length;
            let rho = (q.x * q.x + q.z * q.z).sqrt();
            let alpha = q.z.atan2(q.x);
            let c = if rho > 1e-12 { (r0 + k * q.y) / rho } else { f64::INFINITY };
            let half = if c.abs() < 1.0 { c.acos() } else { std::f64::consts::FRAC_PI_2 };
            let surface = |phi: f64, t: f64| {
                let r = r0 + (r1 - r0) * t;
                prim.frame.to_world(&Vector3::new(r * phi.cos(), t * length, r * phi.sin()))
            };
            if c.abs() < 1.0 {
                for phi in [alpha - half, alpha + half] {
                    let nodes = sample_curve(|t| surface(phi, t), false, projector)?;
                    out.push(stroke(nodes, LineType::Silhouette, prim.label, index));
                }
            }
            for (t, crease) in [(0.0, crease_ends.0), (1.0, crease_ends.1)] {
                let nodes = sample_curve(|s| surface(alpha + (2.0 * s - 1.0) * half, t), false, projector)?;
                let kind = if crease { LineType::Crease } else { LineType::Border };
                out.push(stroke(nodes, kind, prim.label, index));
            }
        }
    }
    Ok(out)
}

/// Horizontal eye line and vertical nose line on the face side (local -z).
fn face_marks(
    prim: &Primitive,
    index: usize,
    semi_axes: &Vector3<f64>,
    projector: &Projector,
) -> Result<Vec<Stroke>, CameraError> {
    let on_head = |u: Vector3<f64>| prim.frame.to_world(&u.component_mul(semi_axes));
    let eyes = sample_curve(
        |s| {
            let theta = (2.0 * s - 1.0) * EYE_HALF_WIDTH;
            let (sb, cb) = EYE_ELEVATION.sin_cos();
            on_head(Vector3::new(theta.sin() * cb, sb, -theta.cos() * cb))
        },
        false,
        projector,
    )?;
    let nose = sample_curve(
        |s| {
            let g = NOSE_RANGE.1 + s * (NOSE_RANGE.0 - NOSE_RANGE.1);
            on_head(Vector3::new(0.0, g.sin(), -g.cos()))
        },
        false,
        projector,
    )?;
    Ok(vec![
        Stroke { nodes: eyes, line_type: LineType::FaceMark, part: PartLabel::FaceMark, occlusion: 0.0, hidden: false, primitive: Some(index) },
        Stroke { nodes: nose, line_type: LineType::FaceMark, part: PartLabel::FaceMark, occlusion: 0.0, hidden: false, primitive: Some(index) },
    ])
}
