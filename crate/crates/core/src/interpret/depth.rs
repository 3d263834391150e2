//! Depth-order hints from border arcs. A border is the eye-facing half of a
//! cylinder rim; in the image it bulges toward the end of the cylinder that
//! lies farther from the eye.

use crate::body_model::{fit_primitives, JointId, PartLabel, PerJoint, Pose, Shape, SkeletonTemplate};

use super::fit::P2;

/// Normalized bulge below which a bone gets no hint.
pub const DEPTH_HINT_THRESHOLD: f64 = 0.15;
/// Accepted arc chord length, in rim radii.
const CHORD_RANGE: (f64, f64) = (1.3, 2.7);
/// Largest |cos| between an arc chord and its bone.
const CHORD_MAX_COS: f64 = 0.5;

/// A rimmed body part: base and tip joints with the rim radius at each, meters.
#[derive(Debug, Clone, Copy)]
pub(super) struct RimBone {
    pub base: JointId,
    pub tip: JointId,
    pub radii: (f64, f64),
}

/// Limb and torso cylinders of the template at rest.
pub(super) fn rim_bones(template: &SkeletonTemplate) -> Vec<RimBone> {
    let rest = template.rest_positions();
    let Ok(body) = fit_primitives(template, &Pose::identity()) else { return Vec::new() };
    let nearest = |x: &nalgebra::Vector3<f64>| {
        JointId::ALL.into_iter().min_by(|a, b| (rest[*a] - x).norm().total_cmp(&(rest[*b] - x).norm())).unwrap()
    };
    body.primitives
        .iter()
        .filter(|p| p.label.is_limb() || matches!(p.label, PartLabel::LowerTorso | PartLabel::UpperTorso))
        .filter_map(|p| {
            let Shape::TaperedCylinder { base_radius, tip_radius, .. } = p.shape else { return None };
            let (b, t) = p.axis_endpoints()?;
            Some(RimBone { base: nearest(&b), tip: nearest(&t), radii: (base_radius, tip_radius) })
        })
        .collect()
}

/// Signed bulge of an arc along `u`, in units of its half chord, or `None`
/// when the stroke is not a rim arc at `at` with radius `r` (pixels).
fn arc_bulge(points: &[P2], at: &P2, r: f64, u: &P2) -> Option<f64> {
    if points.len() < 3 {
        return None;
    }
    let (a, b) = (points[0], points[points.len() - 1]);
    let chord = b - a;
    let len = chord.norm();
    if !(CHORD_RANGE.0 * r..=CHORD_RANGE.1 * r).contains(&len) || (chord / len).dot(u).abs() > CHORD_MAX_COS {
        return None;
    }
    let mid = (a + b) / 2.0;
    if (mid - at).norm() > 0.6 * r + 3.0 {
        return None;
    }
    let mean = points.iter().map(|p| (p - mid).dot(u)).sum::<f64>() / points.len() as f64;
    // A half ellipse has mean offset 2/pi of its height.
    Some(mean * std::f64::consts::FRAC_PI_2 / (len / 2.0))
}

/// Per-joint hint on the bone from the joint's parent: +1 when the joint is
/// nearer the camera than its parent, -1 when farther, 0 when unknown.
pub(super) fn depth_hints(
    bones: &[RimBone],
    template: &SkeletonTemplate,
    positions: &PerJoint<P2>,
    found: &PerJoint<bool>,
    scales: &PerJoint<f64>,
    arcs: &[&[P2]],
) -> PerJoint<i8> {
    // Each arc counts once, for the bone end it fits best.
    let usable: Vec<&RimBone> = bones
        .iter()
        .filter(|b| found[b.base] && found[b.tip] && (positions[b.tip] - positions[b.base]).norm() >= 4.0)
        .collect();
    let mut bulges: Vec<Vec<f64>> = vec![Vec::new(); usable.len()];
    for pts in arcs {
        let mut best: Option<(f64, usize, f64)> = None;
        for (k, bone) in usable.iter().enumerate() {
            let (pb, pt) = (positions[bone.base], positions[bone.tip]);
            let u = (pt - pb).normalize();
            for (at, r) in [(pb, bone.radii.0 * scales[bone.base]), (pt, bone.radii.1 * scales[bone.tip])] {
                let Some(b) = arc_bulge(pts, &at, r, &u) else { continue };
                let chord = pts[pts.len() - 1] - pts[0];
                let mid = (pts[0] + pts[pts.len() - 1]) / 2.0;
                let score = (chord.normalize()).dot(&u).abs() + (mid - at).norm() / r;
                if best.is_none_or(|x| score < x.0) {
                    best = Some((score, k, b));
                }
            }
        }
        if let Some((_, k, b)) = best {
            bulges[k].push(b);
        }
    }
    let mut hints = PerJoint::splat(0i8);
    for (bone, b) in usable.iter().zip(&bulges) {
        if b.is_empty() {
            continue;
        }
        let mean = b.iter().sum::<f64>() / b.len() as f64;
        // Bulging toward the base means the tip is nearer.
        let tip_nearer: i8 = if mean < -DEPTH_HINT_THRESHOLD {
            1
        } else if mean > DEPTH_HINT_THRESHOLD {
            -1
        } else {
            0
        };
        if template.parent(bone.tip) == Some(bone.base) {
            hints[bone.tip] = tip_nearer;
        } else if template.parent(bone.base) == Some(bone.tip) {
            hints[bone.base] = -tip_nearer;
        }
    }
    hints
}
