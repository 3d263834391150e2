//! 3D pose from 2D joints: damped least squares (Levenberg-Marquardt) over
//! root translation, root orientation and every free joint axis, from
//! several starts.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body_model::{forward_frames_unchecked, JointId, PerJoint, Pose, SkeletonTemplate};
use crate::camera::{Camera, Projector};
use crate::render::{Mask, RenderError};

/// Minimum number of confident joints for a lift.
pub const MIN_CONFIDENT_JOINTS: usize = 6;

/// 2D joint estimates with a confidence per joint: 1.0 for direct stroke
/// evidence, 0.5 for indirect evidence, 0.0 for template fill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joints2D {
    pub positions: PerJoint<Vector2<f64>>,
    pub confidence: PerJoint<f64>,
    /// Quantized head turn in the image, [yaw, pitch] each in {-1, 0, 1}:
    /// yaw +1 means the face points toward canvas +x, pitch +1 toward
    /// canvas up.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_hint: Option<[i8; 2]>,
    /// Depth order of each bone from border arcs, keyed by the child joint:
    /// +1 when the joint is nearer the camera than its parent, -1 when
    /// farther, 0 when unknown.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_hints: Option<PerJoint<i8>>,
}

impl Joints2D {
    /// Exact projections, all fully confident.
    pub fn from_positions(positions: PerJoint<Vector2<f64>>) -> Self {
        Joints2D { positions, confidence: PerJoint::splat(1.0), head_hint: None, depth_hints: None }
    }

    pub fn from_pose(template: &SkeletonTemplate, pose: &Pose, camera: &Camera) -> Result<Self, RenderError> {
        Ok(Self::from_positions(crate::render::project_joints(template, pose, camera)?))
    }

    pub fn confident_count(&self) -> usize {
        self.confidence.0.iter().filter(|&&c| c > 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LiftError {
    #[error("only {0} confident joints, need at least {MIN_CONFIDENT_JOINTS}")]
    Underconstrained(usize),
    #[error("invalid lift config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiftConfig {
    /// Joint weights for confidence 1.0, 0.5 and 0.0.
    pub joint_weights: [f64; 3],
    pub lambda_limit: f64,
    pub lambda_prior: f64,
    /// Weight of the head-turn hint.
    pub lambda_head: f64,
    /// Weight of the bone depth-order hints, per squared meter.
    pub lambda_depth: f64,
    /// Weight of the silhouette term; off by default.
    pub lambda_sil: f64,
    pub max_iterations: usize,
    /// Initial damping, relative to the largest diagonal entry of J^T J.
    pub initial_damping: f64,
    pub step_tolerance: f64,
    /// Stop when an accepted step lowers the objective by less than this
    /// fraction.
    pub decrease_tolerance: f64,
    pub starts: usize,
    pub start_sigma_deg: f64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        LiftConfig {
            joint_weights: [1.0, 0.3, 0.0],
            lambda_limit: 10.0,
            lambda_prior: 0.3,
            lambda_head: 0.5,
            lambda_depth: 1e4,
            lambda_sil: 0.0,
            max_iterations: 100,
            initial_damping: 1e-3,
            step_tolerance: 1e-9,
            decrease_tolerance: 1e-10,
            starts: 8,
            start_sigma_deg: 20.0,
        }
    }
}

impl LiftConfig {
    pub fn validate(&self) -> Result<(), LiftError> {
        let others = [
            self.lambda_limit,
            self.lambda_prior,
            self.lambda_head,
            self.lambda_depth,
            self.lambda_sil,
            self.initial_damping,
            self.start_sigma_deg,
        ];
        for &w in self.joint_weights.iter().chain(&others) {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(LiftError::Config(format!("weight {w} must be finite and >= 0")));
            }
        }
        if self.starts == 0 {
            return Err(LiftError::Config("at least one start is required".into()));
        }
        Ok(())
    }

    pub fn weight_for(&self, confidence: f64) -> f64 {
        if confidence >= 1.0 {
            self.joint_weights[0]
        } else if confidence >= 0.5 {
            self.joint_weights[1]
        } else if confidence > 0.0 {
            // Anything between template fill and indirect evidence.
            self.joint_weights[1] * confidence / 0.5
        } else {
            self.joint_weights[2]
        }
    }
}

/// Summary of one optimizer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub initial_objective: f64,
    /// Objective after every accepted step, starting with the initial value.
    pub accepted: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftResult {
    pub pose: Pose,
    pub objective: f64,
    /// Reprojection error per joint, pixels.
    pub joint_errors: PerJoint<f64>,
    pub converged: bool,
    pub starts_evaluated: usize,
    pub best_start: usize,
    pub traces: Vec<StartTrace>,
    pub elapsed_ms: f64,
}

impl LiftResult {
    /// Mean reprojection error over confident joints.
    pub fn mean_confident_error(&self, joints: &Joints2D) -> f64 {
        mean_confident(&self.joint_errors, joints)
    }
}

fn mean_confident(errors: &PerJoint<f64>, joints: &Joints2D) -> f64 {
    let (sum, n) = JointId::ALL
        .into_iter()
        .filter(|&j| joints.confidence[j] > 0.0)
        .fold((0.0, 0), |(s, n), j| (s + errors[j], n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Euclidean distance to the nearest set pixel, per pixel, by the exact
/// separable squared-distance transform.
pub fn distance_transform(mask: &Mask) -> Vec<f64> {
    let (w, h) = (mask.width, mask.height);
    let big = ((w * w + h * h) as f64) * 4.0;
    let mut grid = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            grid[y * w + x] = if mask.get(x, y) { 0.0 } else { big };
        }
    }
    let mut col = vec![0.0; h.max(w)];
    let mut out = vec![0.0; h.max(w)];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        lower_envelope(&col[..h], &mut out[..h]);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        col[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        lower_envelope(&col[..w], &mut out[..w]);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid.iter().map(|v| v.sqrt()).collect()
}

/// 1D squared distance transform: out[q] = min_p (q - p)^2 + f[p].
fn lower_envelope(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut k = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let intersect = |p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
        let mut s = intersect(v[k]);
        // z[0] is -inf, so this stops at k = 0 at the latest.
        while s <= z[k] {
            k -= 1;
            s = intersect(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Silhouette evidence: distance transform of the mask and its pixel scale
/// relative to the camera canvas.
struct SilhouetteField {
    distances: Vec<f64>,
    width: usize,
    height: usize,
    scale: f64,
}

impl SilhouetteField {
    fn new(mask: &Mask, camera: &Camera) -> Self {
        SilhouetteField {
            distances: distance_transform(mask),
            width: mask.width,
            height: mask.height,
            scale: mask.width as f64 / camera.width as f64,
        }
    }

    /// Bilinear distance to the silhouette at a canvas position, in canvas pixels.
    fn distance(&self, p: &Vector2<f64>) -> f64 {
        let x = (p.x * self.scale - 0.5).clamp(0.0, (self.width - 1) as f64);
        let y = (p.y * self.scale - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let d = |x: usize, y: usize| self.distances[y * self.width + x];
        let top = d(x0, y0) * (1.0 - fx) + d(x1, y0) * fx;
        let bottom = d(x0, y1) * (1.0 - fx) + d(x1, y1) * fx;
        (top * (1.0 - fy) + bottom * fy) / self.scale
    }
}

/// Samples per bone for the silhouette term.
const SIL_SAMPLES_PER_BONE: usize = 4;
const ROOT_PARAMS: usize = 6;

/// The least-squares problem for one set of 2D joints.
pub struct LiftProblem<'a> {
    template: &'a SkeletonTemplate,
    projector: Projector,
    camera: &'a Camera,
    joints: &'a Joints2D,
    config: &'a LiftConfig,
    weights: PerJoint<f64>,
    dofs: Vec<(JointId, usize)>,
    silhouette: Option<SilhouetteField>,
}

impl<'a> LiftProblem<'a> {
    pub fn new(
        joints: &'a Joints2D,
        template: &'a SkeletonTemplate,
        camera: &'a Camera,
        config: &'a LiftConfig,
        silhouette: Option<&Mask>,
    ) -> Self {
        let dofs = JointId::ALL
            .into_iter()
            .skip(1)
            .flat_map(|j| (0..3).filter(move |&a| template.limits[j].is_free(a)).map(move |a| (j, a)))
            .collect();
        let silhouette = silhouette.filter(|_| config.lambda_sil > 0.0).map(|m| SilhouetteField::new(m, camera));
        LiftProblem {
            template,
            projector: Projector::new(camera),
            camera,
            joints,
            config,
            weights: PerJoint::from_fn(|j| config.weight_for(joints.confidence[j])),
            dofs,
            silhouette,
        }
    }

    pub fn parameter_count(&self) -> usize {
        ROOT_PARAMS + self.dofs.len()
    }

    pub fn dofs(&self) -> &[(JointId, usize)] {
        &self.dofs
    }

    /// Parameter vector: root translation, root rotation vector, then each
    /// free joint axis.
    pub fn params_from_pose(&self, pose: &Pose) -> DVector<f64> {
        let mut p = DVector::zeros(self.parameter_count());
        p.fixed_rows_mut::<3>(0).copy_from(&pose.root_translation);
        p.fixed_rows_mut::<3>(3).copy_from(&pose.root_orientation.scaled_axis());
        for (i, &(j, a)) in self.dofs.iter().enumerate() {
            p[ROOT_PARAMS + i] = pose.rotation(j)[a];
        }
        p
    }

    pub fn pose_from_params(&self, p: &DVector<f64>) -> Pose {
        let mut pose = Pose::identity();
        pose.root_translation = p.fixed_rows::<3>(0).into_owned();
        pose.root_orientation = UnitQuaternion::from_scaled_axis(p.fixed_rows::<3>(3).into_owned());
        for (i, &(j, a)) in self.dofs.iter().enumerate() {
            let mut r = pose.rotation(j);
            r[a] = p[ROOT_PARAMS + i];
            pose.set_rotation_unclamped(j, r);
        }
        pose
    }

    /// Projects joint parameters into the limit box.
    pub fn clamp_params(&self, p: &mut DVector<f64>) {
        for (i, &(j, a)) in self.dofs.iter().enumerate() {
            let lim = &self.template.limits[j];
            p[ROOT_PARAMS + i] = p[ROOT_PARAMS + i].clamp(lim.min[a], lim.max[a]);
        }
    }

    fn joint_rows(&self) -> usize {
        2 * JointId::ALL.iter().filter(|&&j| self.weights[j] > 0.0).count()
    }

    pub fn residual_count(&self) -> usize {
        let sil = if self.silhouette.is_some() { (JointId::ALL.len() - 1) * SIL_SAMPLES_PER_BONE } else { 0 };
        let depth = if self.joints.depth_hints.is_some() { JointId::ALL.len() - 1 } else { 0 };
        self.joint_rows() + 2 * self.dofs.len() + 2 + depth + sil
    }

    /// Stacked residuals: weighted reprojection errors, squared-hinge limit
    /// violations, the rotation prior, the head-turn hint, squared-hinge
    /// bone depth-order hints and the optional silhouette term.
    pub fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let pose = self.pose_from_params(p);
        let frames = forward_frames_unchecked(self.template, &pose);
        let mut r = DVector::zeros(self.residual_count());
        let mut k = 0;
        for j in JointId::ALL {
            let w = self.weights[j];
            if w <= 0.0 {
                continue;
            }
            let proj = self.project(&frames.positions[j]);
            let d = (proj - self.joints.positions[j]) * w;
            r[k] = d.x;
            r[k + 1] = d.y;
            k += 2;
        }
        let sl = self.config.lambda_limit.sqrt();
        for (i, &(j, a)) in self.dofs.iter().enumerate() {
            let lim = &self.template.limits[j];
            let v = p[ROOT_PARAMS + i];
            let excess = (lim.min[a] - v).max(v - lim.max[a]).max(0.0);
            r[k] = sl * excess * excess;
            k += 1;
        }
        let sp = self.config.lambda_prior.sqrt();
        for i in 0..self.dofs.len() {
            r[k] = sp * p[ROOT_PARAMS + i];
            k += 1;
        }
        if let Some([yaw, pitch]) = self.joints.head_hint {
            let face = frames.rotations[JointId::Neck] * -Vector3::z();
            let basis = &self.projector.basis;
            let sh = self.config.lambda_head.sqrt();
            r[k] = sh * (-(yaw as f64) * face.dot(&basis.right)).max(0.0);
            r[k + 1] = sh * (-(pitch as f64) * face.dot(&basis.up)).max(0.0);
        }
        k += 2;
        if let Some(hints) = &self.joints.depth_hints {
            let sd = self.config.lambda_depth.sqrt();
            let eye = self.projector.origin;
            for j in JointId::ALL.into_iter().skip(1) {
                let parent = self.template.parent(j).expect("non-root");
                // Positive when the joint is nearer the eye than its parent.
                let gain = (frames.positions[parent] - eye).norm() - (frames.positions[j] - eye).norm();
                r[k] = sd * (-(hints[j] as f64) * gain).max(0.0);
                k += 1;
            }
        }
        if let Some(field) = &self.silhouette {
            let ss = self.config.lambda_sil.sqrt();
            for j in JointId::ALL.into_iter().skip(1) {
                let parent = self.template.parent(j).expect("non-root");
                for s in 0..SIL_SAMPLES_PER_BONE {
                    let t = (s as f64 + 0.5) / SIL_SAMPLES_PER_BONE as f64;
                    let x = frames.positions[parent] * (1.0 - t) + frames.positions[j] * t;
                    r[k] = ss * field.distance(&self.project(&x));
                    k += 1;
                }
            }
        }
        r
    }

    /// Projection that degrades smoothly behind the camera instead of failing.
    fn project(&self, x: &Vector3<f64>) -> Vector2<f64> {
        let d = x - self.projector.origin;
        let z = d.dot(&self.projector.basis.forward).max(1e-3);
        Vector2::new(
            self.projector.center.x + self.projector.focal * d.dot(&self.projector.basis.right) / z,
            self.projector.center.y - self.projector.focal * d.dot(&self.projector.basis.up) / z,
        )
    }

    pub fn objective(&self, p: &DVector<f64>) -> f64 {
        0.5 * self.residuals(p).norm_squared()
    }

    /// Forward-difference Jacobian with step `h`.
    pub fn jacobian(&self, p: &DVector<f64>, h: f64) -> DMatrix<f64> {
        let r0 = self.residuals(p);
        let mut jac = DMatrix::zeros(r0.len(), p.len());
        let mut probe = p.clone();
        for c in 0..p.len() {
            probe[c] = p[c] + h;
            let r = self.residuals(&probe);
            probe[c] = p[c];
            jac.set_column(c, &((r - &r0) / h));
        }
        jac
    }

    /// Central-difference Jacobian, used as an independent check.
    pub fn jacobian_central(&self, p: &DVector<f64>, h: f64) -> DMatrix<f64> {
        let n = self.residual_count();
        let mut jac = DMatrix::zeros(n, p.len());
        let mut probe = p.clone();
        for c in 0..p.len() {
            probe[c] = p[c] + h;
            let plus = self.residuals(&probe);
            probe[c] = p[c] - h;
            let minus = self.residuals(&probe);
            probe[c] = p[c];
            jac.set_column(c, &((plus - minus) / (2.0 * h)));
        }
        jac
    }

    /// Reprojection error of every joint, pixels.
    pub fn joint_errors(&self, pose: &Pose) -> PerJoint<f64> {
        let frames = forward_frames_unchecked(self.template, pose);
        PerJoint::from_fn(|j| (self.project(&frames.positions[j]) - self.joints.positions[j]).norm())
    }

    /// Root placement for the rest pose that matches the 2D scale and the
    /// position of the confident joints.
    pub fn initial_root(&self) -> Vector3<f64> {
        let rest = self.template.rest_positions();
        let confident: Vec<JointId> = JointId::ALL.into_iter().filter(|&j| self.joints.confidence[j] > 0.0).collect();
        // Ratio of 2D to 3D extents over confident joint pairs; the upper
        // quartile discounts foreshortened pairs.
        let mut ratios = Vec::new();
        for (i, &a) in confident.iter().enumerate() {
            for &b in &confident[i + 1..] {
                let d3 = (rest[a] - rest[b]).norm();
                if d3 > 0.15 {
                    ratios.push((self.joints.positions[a] - self.joints.positions[b]).norm() / d3);
                }
            }
        }
        let focal = self.projector.focal;
        let depth = if ratios.is_empty() {
            (self.camera.target - self.camera.position).norm()
        } else {
            ratios.sort_by(f64::total_cmp);
            let s = ratios[(ratios.len() * 3 / 4).min(ratios.len() - 1)];
            (focal / s.max(1e-6)).clamp(0.5, 50.0)
        };
        let n = confident.len().max(1) as f64;
        let c2: Vector2<f64> = confident.iter().map(|&j| self.joints.positions[j]).sum::<Vector2<f64>>() / n;
        let c3: Vector3<f64> = confident.iter().map(|&j| rest[j]).sum::<Vector3<f64>>() / n;
        let (origin, dir) = self.projector.pixel_ray(&c2);
        let along = depth / dir.dot(&self.projector.basis.forward);
        origin + dir * along - c3
    }

    /// A start that honours the depth hints: every joint is placed on its
    /// pixel ray at bone length from its parent, on the hinted side (or
    /// level with the parent when unhinted), and the joint rotations are
    /// fitted to those positions.
    pub fn hinted_start(&self) -> Option<DVector<f64>> {
        let hints = self.joints.depth_hints.as_ref()?;
        let t = self.template;
        let eye = self.projector.origin;
        let forward = self.projector.basis.forward;
        let mut x = PerJoint::splat(Vector3::zeros());
        for &j in t.order() {
            let (_, d) = self.projector.pixel_ray(&self.joints.positions[j]);
            let Some(p) = t.parent(j) else {
                let depth = (self.initial_root() - eye).dot(&forward);
                x[j] = eye + d * (depth / d.dot(&forward));
                continue;
            };
            let b = d.dot(&(x[p] - eye));
            let c = (x[p] - eye).norm_squared() - t.bone_length(j).powi(2);
            let root = (b * b - c).max(0.0).sqrt();
            x[j] = eye + d * (b - hints[j] as f64 * root);
        }
        let mut world = PerJoint::splat(Rotation3::identity());
        let mut pose = Pose::identity();
        for &j in t.order() {
            let parent_world = t.parent(j).map_or(Rotation3::identity(), |p| world[p]);
            let children: Vec<JointId> = t.children(j).collect();
            let fitted = match children.as_slice() {
                [] => parent_world,
                [c] => {
                    let from = parent_world * t.offsets[*c];
                    Rotation3::rotation_between(&from, &(x[*c] - x[j])).unwrap_or_else(Rotation3::identity) * parent_world
                }
                _ => {
                    let src: Vec<Vector3<f64>> = children.iter().map(|&c| t.offsets[c]).collect();
                    let dst: Vec<Vector3<f64>> = children.iter().map(|&c| x[c] - x[j]).collect();
                    kabsch(&src, &dst)
                }
            };
            world[j] = fitted;
            match t.parent(j) {
                None => {
                    pose.root_orientation = UnitQuaternion::from_rotation_matrix(&fitted);
                    pose.root_translation = x[j];
                }
                Some(_) => pose.set_rotation_unclamped(j, (parent_world.inverse() * fitted).scaled_axis()),
            }
        }
        let mut p = self.params_from_pose(&pose);
        self.clamp_params(&mut p);
        Some(p)
    }
}

/// Rotation taking the `src` directions closest to `dst`, least squares.
fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Rotation3<f64> {
    let h: Matrix3<f64> = src.iter().zip(dst).map(|(a, b)| b * a.transpose()).sum();
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut d = Matrix3::identity();
    d[(2, 2)] = (u * v_t).determinant().signum();
    Rotation3::from_matrix_unchecked(u * d * v_t)
}

/// Damped least squares from one start. Every accepted step strictly
/// lowers the objective.
fn optimize(problem: &LiftProblem, start: DVector<f64>) -> (DVector<f64>, f64, StartTrace) {
    let cfg = problem.config;
    let mut p = start;
    problem.clamp_params(&mut p);
    let mut r = problem.residuals(&p);
    let mut f = 0.5 * r.norm_squared();
    let mut trace = StartTrace { initial_objective: f, accepted: vec![f], iterations: 0, converged: false };
    let mut mu = -1.0;
    let mut nu = 2.0;
    while trace.iterations < cfg.max_iterations {
        trace.iterations += 1;
        let jac = problem.jacobian(&p, 1e-6);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        if mu < 0.0 {
            let max_diag = (0..jtj.nrows()).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
            mu = cfg.initial_damping * max_diag.max(1e-12);
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-9);
            }
            let Some(chol) = a.cholesky() else {
                mu *= nu;
                nu *= 2.0;
                continue;
            };
            let step = -chol.solve(&g);
            let mut cand = &p + &step;
            problem.clamp_params(&mut cand);
            let actual_step = (&cand - &p).norm();
            let cand_r = problem.residuals(&cand);
            let cand_f = 0.5 * cand_r.norm_squared();
            if cand_f < f {
                let decrease = f - cand_f;
                p = cand;
                r = cand_r;
                f = cand_f;
                trace.accepted.push(f);
                mu = (mu / 3.0).max(1e-15);
                nu = 2.0;
                improved = true;
                if actual_step < cfg.step_tolerance || decrease < cfg.decrease_tolerance * f.max(1e-300) {
                    trace.converged = true;
                }
                break;
            }
            if actual_step < cfg.step_tolerance {
                trace.converged = true;
                break;
            }
            mu *= nu;
            nu *= 2.0;
        }
        if trace.converged || !improved {
            trace.converged = true;
            break;
        }
    }
    (p, f, trace)
}

/// Recovers a limit-respecting pose whose projected joints match `joints`.
pub fn lift(
    joints: &Joints2D,
    template: &SkeletonTemplate,
    camera: &Camera,
    config: &LiftConfig,
    seed: u64,
) -> Result<LiftResult, LiftError> {
    lift_with_silhouette(joints, None, template, camera, config, seed)
}

pub fn lift_with_silhouette(
    joints: &Joints2D,
    silhouette: Option<&Mask>,
    template: &SkeletonTemplate,
    camera: &Camera,
    config: &LiftConfig,
    seed: u64,
) -> Result<LiftResult, LiftError> {
    config.validate()?;
    let n = joints.confident_count();
    if n < MIN_CONFIDENT_JOINTS {
        return Err(LiftError::Underconstrained(n));
    }
    let started = Instant::now();
    let problem = LiftProblem::new(joints, template, camera, config, silhouette);
    let starts = start_points(&problem, config, seed);
    let mut best: Option<(usize, DVector<f64>, f64)> = None;
    let mut traces = Vec::with_capacity(starts.len());
    for (i, start) in starts.into_iter().enumerate() {
        let (p, f, trace) = optimize(&problem, start);
        traces.push(trace);
        if best.as_ref().is_none_or(|b| f < b.2) {
            best = Some((i, p, f));
        }
    }
    let (best_start, params, objective) = best.expect("at least one start");
    let pose = problem.pose_from_params(&params).clamped(template);
    Ok(LiftResult {
        joint_errors: problem.joint_errors(&pose),
        pose,
        objective,
        converged: traces[best_start].converged,
        starts_evaluated: traces.len(),
        best_start,
        traces,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Start 0 is the rest pose placed from the 2D evidence. The last start
/// (when K >= 2) is the same pose turned half a revolution about the
/// vertical axis, the depth-flipped reading. With depth hints and K >= 3,
/// start 1 is the hinted start. The rest add Gaussian rotation noise.
fn start_points(problem: &LiftProblem, config: &LiftConfig, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, config.start_sigma_deg.to_radians()).expect("validated sigma");
    let root = problem.initial_root();
    let rest = Pose::identity().translated(&root);
    let base = problem.params_from_pose(&rest);
    let mut out = vec![base.clone()];
    let hinted = problem.hinted_start().filter(|_| config.starts >= 3);
    for k in 1..config.starts {
        if k == 1 {
            if let Some(h) = &hinted {
                out.push(h.clone());
                continue;
            }
        }
        let mut p = base.clone();
        let flipped = k == config.starts - 1;
        if flipped {
            p[4] = std::f64::consts::PI;
        }
        if !flipped {
            for i in ROOT_PARAMS..p.len() {
                p[i] += noise.sample(&mut rng);
            }
        }
        problem.clamp_params(&mut p);
        out.push(p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::{forward_kinematics, sample_pose, SamplingConfig};
    use crate::metrics::mpjpe;

    fn t() -> &'static SkeletonTemplate {
        SkeletonTemplate::canonical()
    }

    fn joints_of(pose: &Pose) -> Joints2D {
        Joints2D::from_pose(t(), pose, &Camera::default()).unwrap()
    }

    /// Joint MPJPE after rigid alignment of the joint sets themselves.
    fn aligned_mpjpe(a: &Pose, b: &Pose) -> f64 {
        let pa: Vec<_> = forward_kinematics(t(), a).unwrap().0.to_vec();
        let pb: Vec<_> = forward_kinematics(t(), b).unwrap().0.to_vec();
        let tr = crate::metrics::fit_rigid(&pa, &pb).unwrap();
        mpjpe(&tr.apply_all(&pa), &pb).unwrap()
    }

    #[test]
    fn ground_truth_zeroes_joint_block() {
        let pose = sample_pose(5, &SamplingConfig::default(), t());
        let joints = joints_of(&pose);
        let cfg = LiftConfig { lambda_prior: 0.0, ..Default::default() };
        let cam = Camera::default();
        let problem = LiftProblem::new(&joints, t(), &cam, &cfg, None);
        let r = problem.residuals(&problem.params_from_pose(&pose));
        assert!(r.rows(0, 34).amax() < 1e-9);
        // Rest pose sits inside every limit box.
        let rest = Pose::standing(t());
        let rr = problem.residuals(&problem.params_from_pose(&rest));
        let n = problem.dofs().len();
        assert_eq!(rr.rows(34, n).amax(), 0.0);
    }

    #[test]
    fn params_round_trip() {
        let pose = sample_pose(8, &SamplingConfig::default(), t());
        let joints = joints_of(&pose);
        let cam = Camera::default();
        let cfg = LiftConfig::default();
        let problem = LiftProblem::new(&joints, t(), &cam, &cfg, None);
        let back = problem.pose_from_params(&problem.params_from_pose(&pose));
        assert!((back.root_translation - pose.root_translation).norm() < 1e-12);
        assert!(back.root_orientation.angle_to(&pose.root_orientation) < 1e-9);
        for j in JointId::ALL {
            assert!((back.rotation(j) - pose.rotation(j)).norm() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let cam = Camera::default();
        let cfg = LiftConfig::default();
        for seed in 0..20 {
            let truth = sample_pose(100 + seed, &SamplingConfig::default(), t());
            let joints = joints_of(&truth);
            let at = sample_pose(200 + seed, &SamplingConfig::default(), t());
            let problem = LiftProblem::new(&joints, t(), &cam, &cfg, None);
            let p = problem.params_from_pose(&at);
            let j = problem.jacobian(&p, 1e-6);
            let c = problem.jacobian_central(&p, 1e-4);
            let rel = (&j - &c).norm() / c.norm();
            assert!(rel <= 1e-4, "seed {seed}: relative error {rel}");
        }
    }

    #[test]
    fn rest_pose_recovered() {
        let rest = Pose::standing(t());
        let r = lift(&joints_of(&rest), t(), &Camera::default(), &LiftConfig::default(), 0).unwrap();
        let err = aligned_mpjpe(&r.pose, &rest);
        assert!(err <= 0.02, "rest MPJPE {err}");
        assert!(r.pose.max_limit_violation(t()) <= 1e-6);
    }

    #[test]
    fn accepted_steps_strictly_decrease() {
        let pose = sample_pose(9, &SamplingConfig::default(), t());
        let r = lift(&joints_of(&pose), t(), &Camera::default(), &LiftConfig::default(), 3).unwrap();
        assert_eq!(r.starts_evaluated, 8);
        for trace in &r.traces {
            assert!(trace.accepted.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let pose = sample_pose(10, &SamplingConfig::default(), t());
        let j = joints_of(&pose);
        let a = lift(&j, t(), &Camera::default(), &LiftConfig::default(), 4).unwrap();
        let b = lift(&j, t(), &Camera::default(), &LiftConfig::default(), 4).unwrap();
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn too_few_joints_rejected() {
        let mut j = joints_of(&Pose::standing(t()));
        for (i, c) in j.confidence.0.iter_mut().enumerate() {
            *c = if i < 5 { 1.0 } else { 0.0 };
        }
        assert_eq!(lift(&j, t(), &Camera::default(), &LiftConfig::default(), 0), Err(LiftError::Underconstrained(5)));
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let mut mask = Mask::new(23, 17);
        for (x, y) in [(3, 4), (20, 1), (11, 12), (0, 16)] {
            mask.set(x, y, true);
        }
        let dt = distance_transform(&mask);
        for y in 0..17 {
            for x in 0..23 {
                let brute = [(3, 4), (20, 1), (11, 12), (0, 16)]
                    .iter()
                    .map(|&(a, b): &(i32, i32)| (((x as i32 - a).pow(2) + (y as i32 - b).pow(2)) as f64).sqrt())
                    .fold(f64::INFINITY, f64::min);
                assert!((dt[y * 23 + x] - brute).abs() < 1e-12, "({x},{y})");
            }
        }
    }

    #[test]
    fn sampled_poses_lift_accurately() {
        let cam = Camera::default();
        let mut errors = Vec::new();
        let mut slowest: f64 = 0.0;
        for seed in 0..100u64 {
            let truth = sample_pose(seed, &SamplingConfig::default(), t());
            let joints = joints_of(&truth);
            let r = lift(&joints, t(), &cam, &LiftConfig::default(), seed).unwrap();
            slowest = slowest.max(r.elapsed_ms);
            // Reprojection never ends worse than the chosen start began.
            let problem_cfg = LiftConfig::default();
            let problem = LiftProblem::new(&joints, t(), &cam, &problem_cfg, None);
            let start = problem.pose_from_params(&start_points(&problem, &problem_cfg, seed)[r.best_start]);
            let start_err = mean_confident(&problem.joint_errors(&start.clamped(t())), &joints);
            assert!(r.mean_confident_error(&joints) <= start_err + 1e-9);
            errors.push(aligned_mpjpe(&r.pose, &truth));
        }
        let median = crate::metrics::median(&errors);
        assert!(median <= 0.05, "median MPJPE {median}");
        assert!(slowest <= 1000.0, "slowest lift {slowest} ms");
    }
}
