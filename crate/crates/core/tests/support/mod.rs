//! Test oracles shared by integration tests.

#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::Vector3;
use sketchpose::body_model::{PartLabel, Primitive, PrimitiveBody, Shape};
use sketchpose::camera::Camera;
use sketchpose::render::VectorSketch;

/// Depth buffer pixels per canvas pixel along each axis.
const SUPERSAMPLE: f64 = 2.0;
/// Surface sample spacing, meters.
const SPACING: f64 = 2e-3;
/// A surface must be this much nearer than a node to hide it, meters.
const DEPTH_MARGIN: f64 = 2e-3;
/// Same for a face mark behind the head's own front surface. Splats on the
/// sloped head read a few millimetres near; the back half is centimetres
/// behind.
const OWNER_MARGIN: f64 = 1e-2;

/// Per-primitive z-buffers built by splatting dense surface samples:
/// distance from the eye of the nearest sample in each buffer pixel.
pub struct DepthOracle {
    layers: Vec<HashMap<(i64, i64), f64>>,
}

fn ring(r: f64) -> usize {
    ((2.0 * PI * r / SPACING).ceil() as usize).max(8)
}

fn steps(len: f64) -> usize {
    ((len / SPACING).ceil() as usize).max(2)
}

/// Dense points on a primitive's surface, in world coordinates.
fn surface(prim: &Primitive) -> Vec<Vector3<f64>> {
    let mut local = Vec::new();
    match prim.shape {
        Shape::Sphere { radius } => ellipsoid(&Vector3::repeat(radius), &mut local),
        Shape::Ellipsoid { semi_axes } => ellipsoid(&semi_axes, &mut local),
        Shape::TaperedCylinder { base_radius, tip_radius, length } => {
            let n = steps(length);
            for i in 0..=n {
                let t = i as f64 / n as f64;
                let r = base_radius + (tip_radius - base_radius) * t;
                let m = ring(r);
                for k in 0..m {
                    let a = 2.0 * PI * k as f64 / m as f64;
                    local.push(Vector3::new(r * a.cos(), t * length, r * a.sin()));
                }
            }
            for (y, r) in [(0.0, base_radius), (length, tip_radius)] {
                let n = steps(r);
                for i in 0..=n {
                    let rho = r * i as f64 / n as f64;
                    let m = ring(rho);
                    for k in 0..m {
                        let a = 2.0 * PI * k as f64 / m as f64;
                        local.push(Vector3::new(rho * a.cos(), y, rho * a.sin()));
                    }
                }
            }
        }
    }
    local.iter().map(|p| prim.frame.to_world(p)).collect()
}

fn ellipsoid(s: &Vector3<f64>, out: &mut Vec<Vector3<f64>>) {
    let big = s.max();
    let n = steps(PI * big);
    for i in 0..=n {
        let th = PI * i as f64 / n as f64;
        let m = ring(big * th.sin());
        for k in 0..m {
            let ph = 2.0 * PI * k as f64 / m as f64;
            out.push(Vector3::new(s.x * th.sin() * ph.cos(), s.y * th.cos(), s.z * th.sin() * ph.sin()));
        }
    }
}

impl DepthOracle {
    pub fn new(body: &PrimitiveBody, camera: &Camera) -> Self {
        let layers = body
            .primitives
            .iter()
            .map(|prim| {
                let mut layer: HashMap<(i64, i64), f64> = HashMap::new();
                for p in surface(prim) {
                    let Ok(px) = camera.project(&p) else { continue };
                    let d = (p - camera.position).norm();
                    let (cx, cy) = ((px.x * SUPERSAMPLE).floor() as i64, (px.y * SUPERSAMPLE).floor() as i64);
                    // 3x3 splats close the gaps between neighbouring samples.
                    for dx in -1..=1 {
                        for dy in -1..=1 {
                            let e = layer.entry((cx + dx, cy + dy)).or_insert(f64::INFINITY);
                            *e = e.min(d);
                        }
                    }
                }
                layer
            })
            .collect();
        DepthOracle { layers }
    }

    fn depth(&self, layer: usize, px: &nalgebra::Vector2<f64>) -> f64 {
        let key = ((px.x * SUPERSAMPLE).floor() as i64, (px.y * SUPERSAMPLE).floor() as i64);
        self.layers[layer].get(&key).copied().unwrap_or(f64::INFINITY)
    }

    /// Occlusion rating of every stroke: a node is hidden when an
    /// unattached primitive's buffer is nearer at its pixel, or, for face
    /// marks, when the head's own front surface is.
    pub fn ratings(&self, sketch: &VectorSketch, body: &PrimitiveBody, camera: &Camera) -> Vec<f64> {
        sketch
            .strokes
            .iter()
            .map(|stroke| {
                let owner = stroke.primitive.expect("rendered strokes know their primitive");
                let face = stroke.part == PartLabel::FaceMark;
                let hidden = stroke
                    .nodes
                    .iter()
                    .filter(|node| {
                        let d = (node.source - camera.position).norm();
                        let behind_own_face = face && self.depth(owner, &node.position) < d - OWNER_MARGIN;
                        behind_own_face
                            || (0..body.len())
                                .any(|k| body.can_occlude(k, owner) && self.depth(k, &node.position) < d - DEPTH_MARGIN)
                    })
                    .count();
                if stroke.nodes.is_empty() {
                    0.0
                } else {
                    hidden as f64 / stroke.nodes.len() as f64
                }
            })
            .collect()
    }
}

/// Mean absolute difference between rendered and oracle ratings.
pub fn mean_rating_error(sketch: &VectorSketch, body: &PrimitiveBody, camera: &Camera) -> f64 {
    let oracle = DepthOracle::new(body, camera).ratings(sketch, body, camera);
    let total: f64 = sketch.strokes.iter().zip(&oracle).map(|(s, o)| (s.occlusion - o).abs()).sum();
    total / sketch.strokes.len() as f64
}
