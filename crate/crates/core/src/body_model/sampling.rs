use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::joint::JointId;
use super::pose::Pose;
use super::template::SkeletonTemplate;

/// Mixture pose distribution: mostly Gaussian perturbations of the rest
/// pose, the remainder uniform inside the joint limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub gaussian_fraction: f64,
    pub gaussian_sigma_deg: f64,
    pub root_yaw_range_deg: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { gaussian_fraction: 0.7, gaussian_sigma_deg: 15.0, root_yaw_range_deg: 45.0 }
    }
}

pub fn sample_pose(seed: u64, config: &SamplingConfig, template: &SkeletonTemplate) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_pose_with(&mut rng, config, template)
}

pub fn sample_pose_with(rng: &mut impl Rng, config: &SamplingConfig, template: &SkeletonTemplate) -> Pose {
    let mut pose = Pose::standing(template);
    let yaw = config.root_yaw_range_deg.to_radians();
    pose.root_orientation = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), rng.random_range(-yaw..=yaw));

    let gaussian = rng.random_bool(config.gaussian_fraction.clamp(0.0, 1.0));
    let normal = Normal::new(0.0, config.gaussian_sigma_deg.to_radians()).expect("finite sigma");
    for j in JointId::ALL.into_iter().skip(1) {
        let limits = template.limits[j];
        let mut r = Vector3::zeros();
        for axis in 0..3 {
            if !limits.is_free(axis) {
                continue;
            }
            r[axis] = if gaussian {
                normal.sample(rng)
            } else {
                rng.random_range(limits.min[axis]..=limits.max[axis])
            };
        }
        pose.set_rotation_unclamped(j, limits.clamp(&r));
    }
    pose
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let t = SkeletonTemplate::canonical();
        let c = SamplingConfig::default();
        assert_eq!(sample_pose(99, &c, t), sample_pose(99, &c, t));
        assert_ne!(sample_pose(99, &c, t), sample_pose(100, &c, t));
    }

    #[test]
    fn samples_respect_limits() {
        let t = SkeletonTemplate::canonical();
        let c = SamplingConfig::default();
        for seed in 0..1000 {
            assert!(sample_pose(seed, &c, t).is_limit_respecting(t, 0.0), "seed {seed}");
        }
    }

    #[test]
    fn elbow_flexion_spreads_over_range() {
        let t = SkeletonTemplate::canonical();
        let c = SamplingConfig::default();
        let lim = t.limits[JointId::LElbow];
        let range = lim.max.y - lim.min.y;
        let values: Vec<f64> = (0..1000).map(|s| sample_pose(s, &c, t).rotation(JointId::LElbow).y).collect();
        // Distinct values at 0.1 degree resolution.
        let distinct: BTreeSet<i64> = values.iter().map(|v| (v.to_degrees() * 10.0).round() as i64).collect();
        assert!(distinct.len() >= 50, "{} distinct", distinct.len());
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((hi - lo) >= 0.6 * range, "span {} of {}", hi - lo, range);
    }
}
