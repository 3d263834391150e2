use nalgebra::Vector3;

use crate::body_model::{Primitive, PrimitiveBody, Shape};

/// Nearest intersection along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub primitive: usize,
}

/// Smallest positive root of `a t^2 + 2 b t + c = 0`, if any.
fn smallest_positive_root(a: f64, b: f64, c: f64) -> Option<f64> {
    if a.abs() < 1e-300 {
        if b.abs() < 1e-300 {
            return None;
        }
        let t = -c / (2.0 * b);
        return (t > 0.0).then_some(t);
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // Numerically stable pair of roots.
    let q = -(b + b.signum() * s);
    let (mut t0, mut t1) = if q.abs() < 1e-300 { (-b / a, -b / a) } else { (q / a, c / q) };
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    if t0 > 0.0 {
        Some(t0)
    } else if t1 > 0.0 {
        Some(t1)
    } else {
        None
    }
}

/// Both roots of the same quadratic, ascending.
fn roots(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    if a.abs() < 1e-300 {
        if b.abs() < 1e-300 {
            return None;
        }
        let t = -c / (2.0 * b);
        return Some((t, t));
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let q = -(b + b.signum() * s);
    let (t0, t1) = if q.abs() < 1e-300 { (-b / a, -b / a) } else { (q / a, c / q) };
    Some((t0.min(t1), t0.max(t1)))
}

/// Smallest positive ray parameter at which the ray meets the primitive's
/// surface. `dir` must be unit length for the result to be a distance.
pub fn intersect_primitive(prim: &Primitive, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    let o = prim.frame.to_local(origin);
    let d = prim.frame.orientation.inverse_transform_vector(dir);
    match prim.shape {
        Shape::Sphere { radius } => smallest_positive_root(d.dot(&d), o.dot(&d), o.dot(&o) - radius * radius),
        Shape::Ellipsoid { semi_axes: s } => {
            let os = o.component_div(&s);
            let ds = d.component_div(&s);
            smallest_positive_root(ds.dot(&ds), os.dot(&ds), os.dot(&os) - 1.0)
        }
        Shape::TaperedCylinder { base_radius: r0, tip_radius: r1, length } => {
            let k = (r1 - r0) / length;
            let mut best = f64::INFINITY;
            let ro = r0 + k * o.y;
            let a = d.x * d.x + d.z * d.z - k * k * d.y * d.y;
            let b = o.x * d.x + o.z * d.z - k * d.y * ro;
            let c = o.x * o.x + o.z * o.z - ro * ro;
            if let Some((t0, t1)) = roots(a, b, c) {
                for t in [t0, t1] {
                    let y = o.y + t * d.y;
                    if t > 0.0 && (0.0..=length).contains(&y) && t < best {
                        best = t;
                    }
                }
            }
            if d.y.abs() > 1e-300 {
                for (y, r) in [(0.0, r0), (length, r1)] {
                    let t = (y - o.y) / d.y;
                    if t > 0.0 && t < best {
                        let x = o.x + t * d.x;
                        let z = o.z + t * d.z;
                        if x * x + z * z <= r * r {
                            best = t;
                        }
                    }
                }
            }
            best.is_finite().then_some(best)
        }
    }
}

/// Whether `p` lies strictly inside the solid primitive.
pub fn contains_point(prim: &Primitive, p: &Vector3<f64>) -> bool {
    let l = prim.frame.to_local(p);
    match prim.shape {
        Shape::Sphere { radius } => l.norm_squared() < radius * radius,
        Shape::Ellipsoid { semi_axes: s } => l.component_div(&s).norm_squared() < 1.0,
        Shape::TaperedCylinder { base_radius: r0, tip_radius: r1, length } => {
            l.y > 0.0 && l.y < length && (l.x * l.x + l.z * l.z).sqrt() < r0 + (r1 - r0) * l.y / length
        }
    }
}

/// Nearest hit over all primitives, or `None` on a miss.
pub fn ray_cast(origin: &Vector3<f64>, dir: &Vector3<f64>, body: &PrimitiveBody) -> Option<Hit> {
    ray_cast_filtered(origin, dir, body, |_| true)
}

/// Nearest hit over the primitives accepted by `filter`.
pub fn ray_cast_filtered(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    body: &PrimitiveBody,
    filter: impl Fn(usize) -> bool,
) -> Option<Hit> {
    body.primitives
        .iter()
        .enumerate()
        .filter(|(i, _)| filter(*i))
        .filter_map(|(i, p)| intersect_primitive(p, origin, dir).map(|t| Hit { distance: t, primitive: i }))
        .min_by(|a, b| a.distance.total_cmp(&b.distance).then(a.primitive.cmp(&b.primitive)))
}
