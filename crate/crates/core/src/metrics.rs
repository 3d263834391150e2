//! Rigid ICP alignment, Chamfer distance and per-entry position errors.

use std::fmt;

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::body_model::{fit_primitives, forward_kinematics, sample_surface_points, ModelError, Pose, SkeletonTemplate};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty point set")]
    Empty,
    #[error("cardinality mismatch: {0} vs {1}")]
    CardinalityMismatch(usize, usize),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform { rotation: Rotation3::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_all(&self, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Nearest-neighbour index over a fixed point set.
pub struct NearestIndex<'a> {
    points: &'a [Vector3<f64>],
    tree: ImmutableKdTree<f64, u64, 3, 32>,
}

impl<'a> NearestIndex<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Result<Self, MetricsError> {
        if points.is_empty() {
            return Err(MetricsError::Empty);
        }
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Ok(NearestIndex { points, tree: ImmutableKdTree::new_from_slice(&coords) })
    }

    /// Index and Euclidean distance of the closest stored point.
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        let nn = self.tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
        let i = nn.item as usize;
        (i, (q - self.points[i]).norm())
    }
}

/// Mean nearest-neighbour distance from each point of `from` to `to`.
fn directed_mean(from: &[Vector3<f64>], to: &NearestIndex, squared: bool) -> f64 {
    from.iter()
        .map(|p| {
            let d = to.nearest(p).1;
            if squared {
                d * d
            } else {
                d
            }
        })
        .sum::<f64>()
        / from.len() as f64
}

/// Symmetric Chamfer distance with unsquared Euclidean distances, meters.
pub fn chamfer(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64, MetricsError> {
    chamfer_with(a, b, false)
}

pub fn chamfer_with(a: &[Vector3<f64>], b: &[Vector3<f64>], squared: bool) -> Result<f64, MetricsError> {
    let ia = NearestIndex::new(a)?;
    let ib = NearestIndex::new(b)?;
    Ok(0.5 * directed_mean(a, &ib, squared) + 0.5 * directed_mean(b, &ia, squared))
}

fn check_pairs(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::CardinalityMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn mpjpe(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64, MetricsError> {
    check_pairs(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64)
}

/// Mean 2D joint error, pixels.
pub fn joint2d_error(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> Result<f64, MetricsError> {
    check_pairs(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64)
}

/// Mean error over index-corresponded surface points.
pub fn mpvpe(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64, MetricsError> {
    mpjpe(a, b)
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

fn check_spread(points: &[Vector3<f64>]) -> Result<(), MetricsError> {
    if points.len() < 3 {
        return Err(MetricsError::Degenerate(format!("{} points, need 3", points.len())));
    }
    let c = centroid(points);
    let cov: Matrix3<f64> = points.iter().map(|p| (p - c) * (p - c).transpose()).sum();
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 1e-18 || ev[1] <= 1e-10 * ev[0] {
        return Err(MetricsError::Degenerate("points are coincident or collinear".into()));
    }
    Ok(())
}

/// Least-squares rigid transform mapping `src[i]` onto `dst[i]`, from the
/// SVD of the cross-covariance matrix.
pub fn fit_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<RigidTransform, MetricsError> {
    check_pairs(src.len(), dst.len())?;
    let cs = centroid(src);
    let cd = centroid(dst);
    let h: Matrix3<f64> = src.iter().zip(dst).map(|(s, d)| (s - cs) * (d - cd).transpose()).sum();
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = v * fix * u.transpose();
    let rotation = Rotation3::from_matrix_unchecked(r);
    Ok(RigidTransform { rotation, translation: cd - rotation * cs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// RMS nearest-neighbour distance after each iteration, starting with
    /// the unaligned value.
    pub rms_history: Vec<f64>,
}

impl IcpResult {
    pub fn rms(&self) -> f64 {
        *self.rms_history.last().unwrap()
    }
}

/// Rigidly aligns `source` toward `target` by alternating nearest-neighbour
/// matching with a closed-form rigid fit.
pub fn icp_align(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    max_iter: usize,
    tol: f64,
) -> Result<IcpResult, MetricsError> {
    check_spread(source)?;
    check_spread(target)?;
    let index = NearestIndex::new(target)?;
    let rms_of = |pts: &[Vector3<f64>]| -> (f64, Vec<Vector3<f64>>) {
        let mut matched = Vec::with_capacity(pts.len());
        let mut sum = 0.0;
        for p in pts {
            let (i, d) = index.nearest(p);
            sum += d * d;
            matched.push(target[i]);
        }
        ((sum / pts.len() as f64).sqrt(), matched)
    };

    let mut transform = RigidTransform::identity();
    let mut current = source.to_vec();
    let (mut rms, mut matched) = rms_of(&current);
    let mut history = vec![rms];
    for _ in 0..max_iter {
        let step = fit_rigid(&current, &matched)?;
        let moved = step.apply_all(&current);
        let (new_rms, new_matched) = rms_of(&moved);
        if new_rms > rms {
            break;
        }
        transform = step.compose(&transform);
        current = moved;
        matched = new_matched;
        let improvement = rms - new_rms;
        rms = new_rms;
        history.push(rms);
        if improvement < tol {
            break;
        }
    }
    Ok(IcpResult { transform, rms_history: history })
}

/// One row of an evaluation table. Chamfer, Joint3D and MPVPE in meters,
/// Joint2D in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chamfer: f64,
    pub joint3d: f64,
    pub joint2d: f64,
    pub mpvpe: f64,
}

impl MetricReport {
    pub const HEADER: [&'static str; 4] = ["Chamfer", "Joint3D", "Joint2D", "MPVPE"];

    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(MetricReport {
            chamfer: reports.iter().map(|r| r.chamfer).sum::<f64>() / n,
            joint3d: reports.iter().map(|r| r.joint3d).sum::<f64>() / n,
            joint2d: reports.iter().map(|r| r.joint2d).sum::<f64>() / n,
            mpvpe: reports.iter().map(|r| r.mpvpe).sum::<f64>() / n,
        })
    }

    pub fn median(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let med = |f: fn(&MetricReport) -> f64| median(&reports.iter().map(f).collect::<Vec<_>>());
        Some(MetricReport {
            chamfer: med(|r| r.chamfer),
            joint3d: med(|r| r.joint3d),
            joint2d: med(|r| r.joint2d),
            mpvpe: med(|r| r.mpvpe),
        })
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Plain-text table with one labeled row per report.
pub struct MetricTable<'a>(pub &'a [(String, MetricReport)]);

impl fmt::Display for MetricTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.0.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
        write!(f, "{:<width$}", "")?;
        for h in MetricReport::HEADER {
            write!(f, " {h:>10}")?;
        }
        writeln!(f)?;
        for (label, r) in self.0 {
            writeln!(
                f,
                "{label:<width$} {:>10.5} {:>10.5} {:>10.3} {:>10.5}",
                r.chamfer, r.joint3d, r.joint2d, r.mpvpe
            )?;
        }
        Ok(())
    }
}

/// Evaluation settings for comparing a predicted pose with ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub surface_points: usize,
    pub sample_seed: u64,
    pub icp_max_iter: usize,
    pub icp_tol: f64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol { surface_points: 2000, sample_seed: 7, icp_max_iter: 50, icp_tol: 1e-7 }
    }
}

/// Predicted and true 2D joints.
pub type Joints2dPair<'a> = (&'a [Vector2<f64>], &'a [Vector2<f64>]);

/// ICP-aligns the predicted body's surface samples to the ground truth,
/// then reports Chamfer, MPJPE and MPVPE in the aligned frame. Joint2D
/// compares the given 2D joint sets directly.
pub fn evaluate_pose(
    template: &SkeletonTemplate,
    predicted: &Pose,
    truth: &Pose,
    joints2d: Option<Joints2dPair>,
    protocol: &EvalProtocol,
) -> Result<MetricReport, MetricsError> {
    let pred_body = fit_primitives(template, predicted)?;
    let true_body = fit_primitives(template, truth)?;
    let pred_pts: Vec<_> = sample_surface_points(&pred_body, protocol.surface_points, protocol.sample_seed)
        .into_iter()
        .map(|s| s.point)
        .collect();
    let true_pts: Vec<_> = sample_surface_points(&true_body, protocol.surface_points, protocol.sample_seed)
        .into_iter()
        .map(|s| s.point)
        .collect();
    let icp = icp_align(&pred_pts, &true_pts, protocol.icp_max_iter, protocol.icp_tol)?;
    let aligned = icp.transform.apply_all(&pred_pts);
    let pj: Vec<_> = forward_kinematics(template, predicted)?.0.iter().map(|p| icp.transform.apply(p)).collect();
    let tj: Vec<_> = forward_kinematics(template, truth)?.0.to_vec();
    let joint2d = match joints2d {
        Some((a, b)) => joint2d_error(a, b)?,
        None => f64::NAN,
    };
    Ok(MetricReport {
        chamfer: chamfer(&aligned, &true_pts)?,
        joint3d: mpjpe(&pj, &tj)?,
        joint2d,
        mpvpe: mpvpe(&aligned, &true_pts)?,
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::Unit;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn cloud(seed: u64, n: usize) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0), rng.random_range(-0.2..0.2)))
            .collect()
    }

    fn brute_chamfer(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
        let dir = |x: &[Vector3<f64>], y: &[Vector3<f64>]| {
            x.iter().map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64
        };
        0.5 * dir(a, b) + 0.5 * dir(b, a)
    }

    #[test]
    fn chamfer_basics() {
        let a = cloud(1, 50);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        let one = [Vector3::zeros()];
        let other = [Vector3::x()];
        assert_eq!(chamfer(&one, &other).unwrap(), 1.0);
        assert_eq!(chamfer_with(&one, &[Vector3::x() * 2.0], true).unwrap(), 4.0);
        assert_eq!(chamfer(&[], &one), Err(MetricsError::Empty));
    }

    #[test]
    fn chamfer_matches_brute_force_exactly() {
        for seed in 0..5 {
            let a = cloud(seed, 100);
            let b = cloud(seed + 100, 100);
            assert_eq!(chamfer(&a, &b).unwrap(), brute_chamfer(&a, &b));
        }
    }

    proptest! {
        #[test]
        fn chamfer_symmetric_nonnegative(seed in 0u64..1000) {
            let a = cloud(seed, 30);
            let b = cloud(seed ^ 0xabc, 40);
            let ab = chamfer(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, chamfer(&b, &a).unwrap());
        }
    }

    #[test]
    fn position_errors() {
        let a = cloud(3, 17);
        assert_eq!(mpjpe(&a, &a).unwrap(), 0.0);
        let shifted: Vec<_> = a.iter().map(|p| p + Vector3::new(0.0, 0.0, 0.1)).collect();
        assert!((mpjpe(&a, &shifted).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(mpjpe(&a, &a[..3]), Err(MetricsError::CardinalityMismatch(17, 3)));

        // Five entries, hand-computed distances 5, 0, 1, 2, 13 -> mean 4.2.
        let p = [Vector2::new(0.0, 0.0), Vector2::new(1.0, 1.0), Vector2::new(2.0, 0.0), Vector2::new(0.0, 0.0), Vector2::new(0.0, 0.0)];
        let q = [Vector2::new(3.0, 4.0), Vector2::new(1.0, 1.0), Vector2::new(2.0, 1.0), Vector2::new(0.0, -2.0), Vector2::new(5.0, 12.0)];
        assert!((joint2d_error(&p, &q).unwrap() - 4.2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mpjpe_rigid_invariant(seed in 0u64..500, angle in -3.0f64..3.0) {
            let a = cloud(seed, 17);
            let b = cloud(seed + 1, 17);
            let t = RigidTransform {
                rotation: Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(1.0, 2.0, 0.5)), angle),
                translation: Vector3::new(0.3, -1.0, 2.0),
            };
            let before = mpjpe(&a, &b).unwrap();
            let after = mpjpe(&t.apply_all(&a), &t.apply_all(&b)).unwrap();
            prop_assert!((before - after).abs() < 1e-12);
        }
    }

    fn transformed(points: &[Vector3<f64>], deg: f64, t: Vector3<f64>) -> (Vec<Vector3<f64>>, RigidTransform) {
        let tr = RigidTransform { rotation: Rotation3::from_axis_angle(&Vector3::y_axis(), deg.to_radians()), translation: t };
        (tr.apply_all(points), tr)
    }

    #[test]
    fn icp_identity() {
        let a = cloud(4, 200);
        let r = icp_align(&a, &a, 30, 1e-12).unwrap();
        assert!(r.rms() < 1e-12);
        assert!(nalgebra::UnitQuaternion::from_rotation_matrix(&r.transform.rotation).angle() < 1e-9);
        assert!(r.transform.translation.norm() < 1e-9);
    }

    #[test]
    fn icp_recovers_known_transforms() {
        let a = cloud(5, 400);
        for (deg, t) in [(10.0, Vector3::new(0.1, 0.0, 0.0)), (30.0, Vector3::new(0.05, 0.02, -0.03))] {
            let (b, truth) = transformed(&a, deg, t);
            let r = icp_align(&a, &b, 200, 1e-14).unwrap();
            let angle_err = nalgebra::UnitQuaternion::from_rotation_matrix(&(r.transform.rotation.inverse() * truth.rotation)).angle();
            assert!(angle_err < 1e-4, "{deg}: angle error {angle_err}");
            assert!((r.transform.translation - truth.translation).norm() < 1e-4);
            assert!(r.rms_history.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn icp_reduces_chamfer() {
        let a = cloud(6, 300);
        let (b, _) = transformed(&a, 20.0, Vector3::new(0.05, 0.1, 0.0));
        let r = icp_align(&a, &b, 100, 1e-12).unwrap();
        assert!(chamfer(&r.transform.apply_all(&a), &b).unwrap() <= chamfer(&a, &b).unwrap());
    }

    #[test]
    fn icp_rejects_degenerate_clouds() {
        let line: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(icp_align(&line, &cloud(1, 20), 10, 1e-9), Err(MetricsError::Degenerate(_))));
        let same = vec![Vector3::new(1.0, 1.0, 1.0); 5];
        assert!(matches!(icp_align(&cloud(1, 20), &same, 10, 1e-9), Err(MetricsError::Degenerate(_))));
    }

    #[test]
    fn evaluation_of_identical_poses_is_zero() {
        let t = SkeletonTemplate::canonical();
        let pose = crate::body_model::sample_pose(3, &Default::default(), t);
        let r = evaluate_pose(t, &pose, &pose, None, &EvalProtocol::default()).unwrap();
        assert!(r.chamfer < 1e-9 && r.joint3d < 1e-9 && r.mpvpe < 1e-9);
        let table = MetricTable(&[("clean".to_string(), r)]).to_string();
        assert!(table.lines().next().unwrap().contains("Chamfer") && table.contains("clean"));
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
