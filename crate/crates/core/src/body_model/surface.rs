use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::primitives::{PrimitiveBody, Shape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub point: Vector3<f64>,
    pub primitive: usize,
}

/// Area-weighted uniform samples over the union of primitive surfaces.
///
/// The random stream depends only on the seed and the primitive
/// dimensions, so two bodies with the same shape but different poses get
/// index-matched points (used for per-vertex error).
pub fn sample_surface_points(body: &PrimitiveBody, n: usize, seed: u64) -> Vec<SurfacePoint> {
    if body.is_empty() || n == 0 {
        return Vec::new();
    }
    let mut cumulative = Vec::with_capacity(body.len());
    let mut total = 0.0;
    for p in &body.primitives {
        total += p.surface_area();
        cumulative.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let idx = cumulative.partition_point(|&c| c <= u).min(body.len() - 1);
            let prim = &body.primitives[idx];
            let local = sample_local(&prim.shape, &mut rng);
            SurfacePoint { point: prim.frame.to_world(&local), primitive: idx }
        })
        .collect()
}

fn unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn sample_local(shape: &Shape, rng: &mut impl Rng) -> Vector3<f64> {
    use std::f64::consts::TAU;
    match *shape {
        Shape::Sphere { radius } => unit_vector(rng) * radius,
        Shape::Ellipsoid { semi_axes: s } => {
            // Rejection on the area stretch of the sphere-to-ellipsoid map.
            let max = (s.y * s.z).max(s.x * s.z).max(s.x * s.y);
            loop {
                let u = unit_vector(rng);
                let stretch =
                    ((s.y * s.z * u.x).powi(2) + (s.x * s.z * u.y).powi(2) + (s.x * s.y * u.z).powi(2)).sqrt();
                if rng.random::<f64>() * max <= stretch {
                    return u.component_mul(&s);
                }
            }
        }
        Shape::TaperedCylinder { base_radius: r0, tip_radius: r1, length } => {
            let slant = (length * length + (r0 - r1).powi(2)).sqrt();
            let side = std::f64::consts::PI * (r0 + r1) * slant;
            let base = std::f64::consts::PI * r0 * r0;
            let tip = std::f64::consts::PI * r1 * r1;
            let pick = rng.random::<f64>() * (side + base + tip);
            let angle = rng.random::<f64>() * TAU;
            let (sin, cos) = angle.sin_cos();
            if pick < side {
                // Density along the axis is proportional to the local radius.
                let v = rng.random::<f64>();
                let t = if (r1 - r0).abs() < 1e-15 {
                    v
                } else {
                    let a = r1 - r0;
                    ((r0 * r0 + v * (r1 * r1 - r0 * r0)).sqrt() - r0) / a
                };
                let r = r0 + (r1 - r0) * t;
                Vector3::new(r * cos, t * length, r * sin)
            } else {
                let (r, y) = if pick < side + base { (r0, 0.0) } else { (r1, length) };
                let rho = r * rng.random::<f64>().sqrt();
                Vector3::new(rho * cos, y, rho * sin)
            }
        }
    }
}
