use nalgebra::{Matrix3, Vector2, Vector3};

pub type P2 = Vector2<f64>;

pub fn polyline_length(points: &[P2]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Resamples to uniform arc-length spacing as close to `spacing` as the
/// length allows. Both endpoints are kept.
pub fn resample(points: &[P2], spacing: f64) -> Vec<P2> {
    if points.len() < 2 || !(spacing > 0.0) {
        return points.to_vec();
    }
    let total = polyline_length(points);
    if total <= 0.0 {
        return vec![points[0]];
    }
    let segments = ((total / spacing).round() as usize).max(1);
    let step = total / segments as f64;
    let mut out = Vec::with_capacity(segments + 1);
    out.push(points[0]);
    let mut seg = 0;
    let mut seg_start = 0.0;
    let mut seg_len = (points[1] - points[0]).norm();
    for k in 1..segments {
        let s = k as f64 * step;
        while seg_start + seg_len < s && seg + 2 < points.len() {
            seg_start += seg_len;
            seg += 1;
            seg_len = (points[seg + 1] - points[seg]).norm();
        }
        let t = if seg_len > 0.0 { ((s - seg_start) / seg_len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(points[seg] + (points[seg + 1] - points[seg]) * t);
    }
    out.push(*points.last().unwrap());
    out
}

pub fn centroid(points: &[P2]) -> P2 {
    points.iter().sum::<P2>() / points.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: P2,
    pub radius: f64,
    /// RMS radial residual, pixels.
    pub residual: f64,
}

/// Algebraic (Kasa) least-squares circle. Coordinates are centred on the
/// centroid before solving.
pub fn fit_circle(points: &[P2]) -> Option<Circle> {
    if points.len() < 3 {
        return None;
    }
    let c0 = centroid(points);
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for p in points {
        let q = p - c0;
        let row = Vector3::new(q.x, q.y, 1.0);
        ata += row * row.transpose();
        atb += row * -(q.x * q.x + q.y * q.y);
    }
    let sol = ata.lu().solve(&atb)?;
    let center = Vector2::new(-sol.x / 2.0, -sol.y / 2.0);
    let r2 = center.norm_squared() - sol.z;
    if !(r2 > 0.0) || !r2.is_finite() {
        return None;
    }
    let radius = r2.sqrt();
    let residual =
        (points.iter().map(|p| ((p - c0 - center).norm() - radius).powi(2)).sum::<f64>() / points.len() as f64).sqrt();
    Some(Circle { center: center + c0, radius, residual })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: P2,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Unit direction of the major axis.
    pub major_dir: P2,
    /// RMS of the normalised radial error, scaled by the mean semi-axis.
    pub residual: f64,
}

impl Ellipse {
    pub fn aspect(&self) -> f64 {
        self.semi_major / self.semi_minor
    }

    pub fn minor_dir(&self) -> P2 {
        Vector2::new(-self.major_dir.y, self.major_dir.x)
    }

    /// Coordinates in the ellipse frame, divided by the semi-axes.
    pub fn normalized(&self, p: &P2) -> P2 {
        let d = p - self.center;
        Vector2::new(d.dot(&self.major_dir) / self.semi_major, d.dot(&self.minor_dir()) / self.semi_minor)
    }

    pub fn major_endpoints(&self) -> (P2, P2) {
        (self.center + self.major_dir * self.semi_major, self.center - self.major_dir * self.semi_major)
    }
}

/// Direct least-squares ellipse fit (Fitzgibbon), in the numerically
/// stable split form of Halir and Flusser. Points are centred and scaled
/// before fitting.
pub fn fit_ellipse(points: &[P2]) -> Option<Ellipse> {
    if points.len() < 5 {
        return None;
    }
    let c0 = centroid(points);
    let scale = (points.iter().map(|p| (p - c0).norm_squared()).sum::<f64>() / points.len() as f64).sqrt();
    if !(scale > 0.0) {
        return None;
    }
    let (mut s1, mut s2, mut s3) = (Matrix3::zeros(), Matrix3::zeros(), Matrix3::zeros());
    for p in points {
        let q = (p - c0) / scale;
        let d1 = Vector3::new(q.x * q.x, q.x * q.y, q.y * q.y);
        let d2 = Vector3::new(q.x, q.y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    let t = -s3.try_inverse()? * s2.transpose();
    let m = s1 + s2 * t;
    // Premultiply by the inverse of the constraint block.
    let m = Matrix3::new(m[(2, 0)] / 2.0, m[(2, 1)] / 2.0, m[(2, 2)] / 2.0, -m[(1, 0)], -m[(1, 1)], -m[(1, 2)], m[(0, 0)] / 2.0, m[(0, 1)] / 2.0, m[(0, 2)] / 2.0);
    let mut best: Option<Vector3<f64>> = None;
    for ev in m.complex_eigenvalues().iter() {
        if ev.im.abs() > 1e-9 * (1.0 + ev.re.abs()) {
            continue;
        }
        let shifted = m - Matrix3::identity() * ev.re;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t?;
        let (idx, _) = svd.singular_values.argmin();
        let a1: Vector3<f64> = v_t.row(idx).transpose();
        if 4.0 * a1.x * a1.z - a1.y * a1.y > 0.0 {
            best = Some(a1);
        }
    }
    let a1 = best?;
    let a2 = t * a1;
    let (a, b, c, d, e, f) = (a1.x, a1.y, a1.z, a2.x, a2.y, a2.z);
    // Conic a x^2 + b xy + c y^2 + d x + e y + f = 0.
    let det = 4.0 * a * c - b * b;
    let cx = (b * e - 2.0 * c * d) / det;
    let cy = (b * d - 2.0 * a * e) / det;
    let f0 = a * cx * cx + b * cx * cy + c * cy * cy + d * cx + e * cy + f;
    let q = nalgebra::Matrix2::new(a, b / 2.0, b / 2.0, c);
    let eig = q.symmetric_eigen();
    let (l0, l1) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    let ax0 = -f0 / l0;
    let ax1 = -f0 / l1;
    if !(ax0 > 0.0 && ax1 > 0.0) {
        return None;
    }
    let (r0, r1) = (ax0.sqrt() * scale, ax1.sqrt() * scale);
    let (semi_major, semi_minor, dir) = if r0 >= r1 {
        (r0, r1, eig.eigenvectors.column(0).into_owned())
    } else {
        (r1, r0, eig.eigenvectors.column(1).into_owned())
    };
    let mut out = Ellipse {
        center: c0 + Vector2::new(cx, cy) * scale,
        semi_major,
        semi_minor,
        major_dir: dir.normalize(),
        residual: 0.0,
    };
    let mean_axis = (semi_major + semi_minor) / 2.0;
    out.residual = (points.iter().map(|p| (out.normalized(p).norm() - 1.0).powi(2)).sum::<f64>() / points.len() as f64)
        .sqrt()
        * mean_axis;
    out.semi_major.is_finite().then_some(out)
}

/// Largest distance of any point from the chord between the endpoints.
pub fn chord_deviation(points: &[P2]) -> f64 {
    let (Some(a), Some(b)) = (points.first(), points.last()) else {
        return 0.0;
    };
    let d = b - a;
    let len = d.norm();
    if len == 0.0 {
        return points.iter().map(|p| (p - a).norm()).fold(0.0, f64::max);
    }
    points.iter().map(|p| (d.x * (p.y - a.y) - d.y * (p.x - a.x)).abs() / len).fold(0.0, f64::max)
}

/// Distance from `p` to the segment `a`-`b`.
pub fn segment_distance(p: &P2, a: &P2, b: &P2) -> f64 {
    let d = b - a;
    let l2 = d.norm_squared();
    let t = if l2 > 0.0 { ((p - a).dot(&d) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (a + d * t - p).norm()
}
