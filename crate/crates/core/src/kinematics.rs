//! Pose editing: clamped joint edits and position-only damped least
//! squares IK on a single chain.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::body_model::{fk_unchecked, JointId, Pose, SkeletonTemplate};

/// Joints exposed as drag handles.
pub const IK_HANDLES: [JointId; 6] =
    [JointId::LWrist, JointId::RWrist, JointId::LAnkle, JointId::RAnkle, JointId::HeadTop, JointId::Chest];

const LAMBDA_MIN: f64 = 0.01;
const LAMBDA_MAX: f64 = 10.0;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("`{effector}` is not below chain root `{root}`")]
    NotInChain { effector: JointId, root: JointId },
    #[error("invalid IK request: {0}")]
    Invalid(String),
}

fn default_root() -> JointId {
    JointId::Pelvis
}
fn default_iterations() -> usize {
    200
}
fn default_damping() -> f64 {
    0.1
}
fn default_tolerance() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkRequest {
    pub effector: JointId,
    pub target: Vector3<f64>,
    #[serde(default = "default_root")]
    pub chain_root: JointId,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    /// Initial damping.
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Position tolerance, meters.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl IkRequest {
    pub fn new(effector: JointId, target: Vector3<f64>) -> Self {
        IkRequest {
            effector,
            target,
            chain_root: default_root(),
            max_iterations: default_iterations(),
            damping: default_damping(),
            tolerance: default_tolerance(),
        }
    }

    pub fn validate(&self, template: &SkeletonTemplate) -> Result<(), KinematicsError> {
        if !template.is_descendant(self.effector, self.chain_root) {
            return Err(KinematicsError::NotInChain { effector: self.effector, root: self.chain_root });
        }
        if !(self.tolerance > 0.0) {
            return Err(KinematicsError::Invalid(format!("tolerance {} must be positive", self.tolerance)));
        }
        if !(self.damping >= 0.0) || !self.target.iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::Invalid("damping must be >= 0 and the target finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkResult {
    pub pose: Pose,
    /// Final effector distance to the target, meters.
    pub error: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Best-so-far error after each iteration, starting with the initial error.
    pub error_history: Vec<f64>,
}

/// Stores `rotation` clamped into the joint's limits. The root joint has no
/// local rotation and is left unchanged.
pub fn set_joint_rotation(pose: &Pose, joint: JointId, rotation: Vector3<f64>, template: &SkeletonTemplate) -> Pose {
    let mut out = pose.clone();
    out.set_rotation_unclamped(joint, template.limits[joint].clamp(&rotation));
    out
}

/// Free rotation axes of the joints between the chain root (inclusive) and
/// the effector (exclusive).
pub fn chain_dofs(template: &SkeletonTemplate, root: JointId, effector: JointId) -> Vec<(JointId, usize)> {
    let mut chain = Vec::new();
    let mut cur = template.parent(effector);
    while let Some(j) = cur {
        if !template.is_descendant(j, root) {
            break;
        }
        chain.push(j);
        cur = template.parent(j);
    }
    chain.reverse();
    chain
        .into_iter()
        .flat_map(|j| (0..3).filter(move |&a| template.limits[j].is_free(a)).map(move |a| (j, a)))
        .collect()
}

fn effector_position(template: &SkeletonTemplate, pose: &Pose, effector: JointId) -> Vector3<f64> {
    fk_unchecked(template, pose)[effector]
}

/// Central-difference positional Jacobian of the effector.
fn jacobian(template: &SkeletonTemplate, pose: &Pose, effector: JointId, dofs: &[(JointId, usize)]) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(3, dofs.len());
    let mut probe = pose.clone();
    for (c, &(j, a)) in dofs.iter().enumerate() {
        let base = pose.rotation(j);
        let mut r = base;
        r[a] = base[a] + FD_STEP;
        probe.set_rotation_unclamped(j, r);
        let plus = effector_position(template, &probe, effector);
        r[a] = base[a] - FD_STEP;
        probe.set_rotation_unclamped(j, r);
        let minus = effector_position(template, &probe, effector);
        probe.set_rotation_unclamped(j, base);
        jac.set_column(c, &((plus - minus) / (2.0 * FD_STEP)));
    }
    jac
}

/// Damped least squares on the chain from `req.chain_root` to
/// `req.effector`. Coordinates resting on a limit that the step would push
/// through are left out of it, and each step is clamped into the limits. A step that
/// raises the error is rejected and the damping doubled; an accepted step
/// halves it.
pub fn solve_ik(pose: &Pose, req: &IkRequest, template: &SkeletonTemplate) -> Result<IkResult, KinematicsError> {
    req.validate(template)?;
    let dofs = chain_dofs(template, req.chain_root, req.effector);
    let mut best = pose.clone();
    let mut err_vec = req.target - effector_position(template, &best, req.effector);
    let mut err = err_vec.norm();
    let mut history = vec![err];
    let mut lambda = req.damping.clamp(LAMBDA_MIN, LAMBDA_MAX);
    let mut iterations = 0;
    while err > req.tolerance && iterations < req.max_iterations && !dofs.is_empty() {
        iterations += 1;
        let mut jac = jacobian(template, &best, req.effector, &dofs);
        let mut delta = None;
        // Freeze coordinates pinned at a limit that the step pushes further
        // out, then solve again without them.
        for _ in 0..=dofs.len() {
            let jjt: Matrix3<f64> = (&jac * jac.transpose()).fixed_view::<3, 3>(0, 0).into_owned();
            let Some(inv) = (jjt + Matrix3::identity() * lambda * lambda).try_inverse() else { break };
            let d = jac.transpose() * (inv * err_vec);
            let mut pinned = false;
            for (c, &(j, a)) in dofs.iter().enumerate() {
                let (v, lim) = (best.rotation(j)[a], &template.limits[j]);
                let out = (v >= lim.max[a] && d[c] > 0.0) || (v <= lim.min[a] && d[c] < 0.0);
                if out && jac.column(c).norm() > 0.0 {
                    jac.column_mut(c).fill(0.0);
                    pinned = true;
                }
            }
            delta = Some(d);
            if !pinned {
                break;
            }
        }
        let Some(delta) = delta else {
            lambda = (lambda * 2.0).min(LAMBDA_MAX);
            history.push(err);
            continue;
        };
        let mut candidate = best.clone();
        for (c, &(j, a)) in dofs.iter().enumerate() {
            let mut r = candidate.rotation(j);
            r[a] += delta[c];
            candidate.set_rotation_unclamped(j, template.limits[j].clamp(&r));
        }
        let cand_vec = req.target - effector_position(template, &candidate, req.effector);
        let cand_err = cand_vec.norm();
        if cand_err < err {
            best = candidate;
            err = cand_err;
            err_vec = cand_vec;
            lambda = (lambda / 2.0).max(LAMBDA_MIN);
        } else {
            if lambda >= LAMBDA_MAX {
                history.push(err);
                break;
            }
            lambda = (lambda * 2.0).min(LAMBDA_MAX);
        }
        history.push(err);
    }
    Ok(IkResult { pose: best, error: err, converged: err <= req.tolerance, iterations, error_history: history })
}
