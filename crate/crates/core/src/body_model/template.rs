use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::joint::{JointId, PerJoint, JOINT_COUNT};
use super::ModelError;

pub const TEMPLATE_FORMAT: u32 = 1;

const CANONICAL_TOML: &str = include_str!("../../config/skeleton.toml");

/// Per-axis bounds on a joint's local rotation vector, in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl JointLimits {
    pub const LOCKED: JointLimits = JointLimits {
        min: Vector3::new(0.0, 0.0, 0.0),
        max: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn clamp(&self, r: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| r[i].clamp(self.min[i], self.max[i]))
    }

    /// Largest amount by which `r` leaves the box, 0 inside.
    pub fn violation(&self, r: &Vector3<f64>) -> f64 {
        (0..3)
            .map(|i| (self.min[i] - r[i]).max(r[i] - self.max[i]).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, r: &Vector3<f64>, tol: f64) -> bool {
        self.violation(r) <= tol
    }

    pub fn is_free(&self, axis: usize) -> bool {
        self.max[axis] > self.min[axis]
    }

    pub fn is_locked(&self) -> bool {
        (0..3).all(|i| !self.is_free(i))
    }

    /// Limits of the sagittal mirror joint.
    pub fn mirrored(&self) -> JointLimits {
        JointLimits {
            min: Vector3::new(self.min.x, -self.max.y, -self.max.z),
            max: Vector3::new(self.max.x, -self.min.y, -self.min.z),
        }
    }
}

/// The fixed-shape articulated skeleton: topology, rest offsets and limits.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTemplate {
    pub name: String,
    pub parents: PerJoint<Option<JointId>>,
    /// Rest offset of each joint from its parent, in the parent frame.
    pub offsets: PerJoint<Vector3<f64>>,
    pub limits: PerJoint<JointLimits>,
    /// Ankle to ground clearance, only used for standing height.
    pub sole_height: f64,
    order: Vec<JointId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TemplateFile {
    format: u32,
    name: String,
    sole_height: f64,
    joints: Vec<JointEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JointEntry {
    name: JointId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<JointId>,
    offset: [f64; 3],
    min_deg: [f64; 3],
    max_deg: [f64; 3],
}

impl SkeletonTemplate {
    /// The built-in adult template (shared, parsed once).
    pub fn canonical() -> &'static SkeletonTemplate {
        static CANONICAL: OnceLock<SkeletonTemplate> = OnceLock::new();
        CANONICAL.get_or_init(|| {
            SkeletonTemplate::from_toml_str(CANONICAL_TOML).expect("built-in skeleton config is valid")
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let file: TemplateFile =
            toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        Self::from_file_record(file)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let joints = JointId::ALL
            .iter()
            .map(|&j| JointEntry {
                name: j,
                parent: self.parents[j],
                offset: self.offsets[j].into(),
                min_deg: self.limits[j].min.map(f64::to_degrees).into(),
                max_deg: self.limits[j].max.map(f64::to_degrees).into(),
            })
            .collect();
        let file = TemplateFile {
            format: TEMPLATE_FORMAT,
            name: self.name.clone(),
            sole_height: self.sole_height,
            joints,
        };
        toml::to_string_pretty(&file).expect("template serializes")
    }

    fn from_file_record(file: TemplateFile) -> Result<Self, ModelError> {
        if file.format != TEMPLATE_FORMAT {
            return Err(ModelError::Config(format!(
                "unsupported template format {} (expected {TEMPLATE_FORMAT})",
                file.format
            )));
        }
        let mut entries: BTreeMap<JointId, JointEntry> = BTreeMap::new();
        for entry in file.joints {
            let name = entry.name;
            if entries.insert(name, entry).is_some() {
                return Err(ModelError::Config(format!("joint `{name}` declared twice")));
            }
        }
        if entries.len() != JOINT_COUNT {
            let missing: Vec<_> =
                JointId::ALL.iter().filter(|j| !entries.contains_key(j)).map(|j| j.name()).collect();
            return Err(ModelError::Config(format!("missing joints: {}", missing.join(", "))));
        }
        let parents = PerJoint::from_fn(|j| entries[&j].parent);
        let offsets = PerJoint::from_fn(|j| Vector3::from(entries[&j].offset));
        let limits = PerJoint::from_fn(|j| {
            let e = &entries[&j];
            JointLimits {
                min: Vector3::from(e.min_deg).map(f64::to_radians),
                max: Vector3::from(e.max_deg).map(f64::to_radians),
            }
        });
        Self::new(file.name, parents, offsets, limits, file.sole_height)
    }

    pub fn new(
        name: String,
        parents: PerJoint<Option<JointId>>,
        offsets: PerJoint<Vector3<f64>>,
        limits: PerJoint<JointLimits>,
        sole_height: f64,
    ) -> Result<Self, ModelError> {
        let order = topological_order(&parents)?;
        for j in JointId::ALL {
            if parents[j].is_some() && offsets[j].norm() <= 0.0 {
                return Err(ModelError::Config(format!("bone ending at `{j}` has zero length")));
            }
            let l = &limits[j];
            for axis in 0..3 {
                if !(l.min[axis] <= 0.0 && 0.0 <= l.max[axis]) {
                    return Err(ModelError::Config(format!(
                        "limits of `{j}` axis {axis} exclude the rest pose"
                    )));
                }
            }
        }
        if !limits[JointId::Pelvis].is_locked() {
            return Err(ModelError::Config("the root carries no joint rotation".into()));
        }
        let template = SkeletonTemplate { name, parents, offsets, limits, sole_height, order };
        let height = template.rest_height();
        if !(1.6..=1.9).contains(&height) {
            return Err(ModelError::Config(format!("rest height {height:.3} m outside [1.6, 1.9]")));
        }
        Ok(template)
    }

    /// Joints in parent-before-child order, starting at the root.
    pub fn order(&self) -> &[JointId] {
        &self.order
    }

    pub fn parent(&self, j: JointId) -> Option<JointId> {
        self.parents[j]
    }

    pub fn bone_length(&self, j: JointId) -> f64 {
        self.offsets[j].norm()
    }

    pub fn children(&self, j: JointId) -> impl Iterator<Item = JointId> + '_ {
        JointId::ALL.into_iter().filter(move |&c| self.parents[c] == Some(j))
    }

    /// True when `j` lies on the path from `ancestor` (inclusive) downwards.
    pub fn is_descendant(&self, j: JointId, ancestor: JointId) -> bool {
        let mut cur = Some(j);
        while let Some(c) = cur {
            if c == ancestor {
                return true;
            }
            cur = self.parents[c];
        }
        false
    }

    /// Rest-pose joint positions with the root at the origin.
    pub fn rest_positions(&self) -> PerJoint<Vector3<f64>> {
        let mut out = PerJoint::splat(Vector3::zeros());
        for &j in &self.order {
            if let Some(p) = self.parents[j] {
                out[j] = out[p] + self.offsets[j];
            }
        }
        out
    }

    /// Sole-to-crown height of the rest pose.
    pub fn rest_height(&self) -> f64 {
        let rest = self.rest_positions();
        let (lo, hi) = rest
            .0
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
        hi - lo + self.sole_height
    }

    /// Height of the pelvis above the ground in the rest pose.
    pub fn standing_pelvis_height(&self) -> f64 {
        let rest = self.rest_positions();
        -rest.0.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) + self.sole_height
    }

    /// Checks that every left joint mirrors its right counterpart.
    pub fn check_symmetry(&self, tol: f64) -> Result<(), ModelError> {
        for j in JointId::ALL.into_iter().filter(|j| j.is_left()) {
            let m = j.mirror();
            let off = self.offsets[j];
            let mirrored = Vector3::new(-off.x, off.y, off.z);
            if (mirrored - self.offsets[m]).norm() > tol {
                return Err(ModelError::Config(format!("offsets of `{j}` and `{m}` are not mirrored")));
            }
            let lim = self.limits[j].mirrored();
            if (lim.min - self.limits[m].min).norm() > tol || (lim.max - self.limits[m].max).norm() > tol {
                return Err(ModelError::Config(format!("limits of `{j}` and `{m}` are not mirrored")));
            }
        }
        Ok(())
    }
}

fn topological_order(parents: &PerJoint<Option<JointId>>) -> Result<Vec<JointId>, ModelError> {
    let roots: Vec<_> = JointId::ALL.iter().filter(|&&j| parents[j].is_none()).collect();
    if roots.len() != 1 || *roots[0] != JointId::Pelvis {
        return Err(ModelError::Config("the pelvis must be the single root".into()));
    }
    let mut order = vec![JointId::Pelvis];
    let mut placed = PerJoint::splat(false);
    placed[JointId::Pelvis] = true;
    while order.len() < JOINT_COUNT {
        let before = order.len();
        for j in JointId::ALL {
            if !placed[j] && parents[j].is_some_and(|p| placed[p]) {
                placed[j] = true;
                order.push(j);
            }
        }
        if order.len() == before {
            return Err(ModelError::Config("joint hierarchy contains a cycle".into()));
        }
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_template_is_valid() {
        let t = SkeletonTemplate::canonical();
        assert!((t.rest_height() - 1.75).abs() < 1e-12);
        t.check_symmetry(1e-12).unwrap();
        for j in JointId::ALL {
            assert_eq!(t.parent(j), j.canonical_parent());
        }
        assert!((t.standing_pelvis_height() - 1.05).abs() < 1e-12);
    }

    #[test]
    fn toml_round_trip() {
        let t = SkeletonTemplate::canonical();
        let again = SkeletonTemplate::from_toml_str(&t.to_toml_string()).unwrap();
        assert_eq!(again.parents, t.parents);
        for j in JointId::ALL {
            assert!((again.offsets[j] - t.offsets[j]).norm() < 1e-12);
            assert!((again.limits[j].min - t.limits[j].min).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_cycles_and_illegal_rest() {
        let text = CANONICAL_TOML.replace(
            "name = \"spine_mid\"\nparent = \"pelvis\"",
            "name = \"spine_mid\"\nparent = \"chest\"",
        );
        assert!(matches!(SkeletonTemplate::from_toml_str(&text), Err(ModelError::Config(_))));

        let text = CANONICAL_TOML.replacen("min_deg = [-45.0, -30.0, -20.0]", "min_deg = [5.0, -30.0, -20.0]", 1);
        let err = SkeletonTemplate::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("rest pose"), "{err}");
    }

    #[test]
    fn rejects_wrong_format_version() {
        let text = CANONICAL_TOML.replacen("format = 1", "format = 7", 1);
        assert!(SkeletonTemplate::from_toml_str(&text).is_err());
    }
}
