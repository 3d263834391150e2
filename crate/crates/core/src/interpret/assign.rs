//! Joint graph and the branch-and-bound search that maps graph nodes onto
//! the four limb chains.

use std::collections::HashSet;

use super::edges::LimbSegment;
use super::fit::P2;
use super::InterpretError;
use crate::body_model::{JointId, PartLabel, Pose, PrimitiveBody, Shape, SkeletonTemplate};

/// Segment endpoints within this distance (plus half the circle radius)
/// snap to a joint circle; unsnapped endpoints merge within it.
pub const SNAP_PX: f64 = 20.0;
/// Expanded search nodes before the search gives up.
pub const SEARCH_BUDGET: usize = 10_000;
/// Per-term cap on log-ratio costs.
const CLIP: f64 = 2.0;
/// Bone between two nodes with no limb segment joining them.
const CONNECT_PENALTY: f64 = 0.5;
/// Chain slot left empty.
const MISSING_PENALTY: f64 = 1.5;
/// Chain slot filled by a segment endpoint rather than a joint circle.
const INDIRECT_PENALTY: f64 = 0.75;
/// Candidates kept per chain kind.
const CANDIDATES_PER_KIND: usize = 40;
/// Weight of the bone-length cost for bones shorter than expected.
const FORESHORTENED_WEIGHT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub pos: P2,
    /// Circle radius for joint-circle nodes.
    pub radius: Option<f64>,
    /// Source stroke of a circle node.
    pub stroke: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct JointGraph {
    pub nodes: Vec<Node>,
    /// Node pairs joined by a limb segment, stored as (min, max).
    pub adjacent: HashSet<(usize, usize)>,
    /// Node at each end of every segment.
    pub segment_nodes: Vec<(usize, usize)>,
    /// Midline endpoints of paired segments: (node, node at the other end,
    /// endpoint position, segment width).
    pub ends: Vec<(usize, usize, P2, f64)>,
}

impl JointGraph {
    /// Circles become nodes first; segment endpoints snap to them or merge
    /// into endpoint nodes.
    pub fn build(circles: &[(usize, P2, f64)], segments: &[LimbSegment]) -> JointGraph {
        let mut g = JointGraph::default();
        for &(stroke, pos, r) in circles {
            g.nodes.push(Node { pos, radius: Some(r), stroke: Some(stroke) });
        }
        let n_circles = g.nodes.len();
        let mut sums: Vec<(P2, usize)> = Vec::new();
        let mut snap = |p: P2, g: &mut JointGraph| -> usize {
            let nearest_circle = (0..n_circles)
                .map(|i| (i, (g.nodes[i].pos - p).norm()))
                .filter(|&(i, d)| d <= SNAP_PX + 0.5 * g.nodes[i].radius.unwrap_or(0.0))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((i, _)) = nearest_circle {
                return i;
            }
            let nearest_end = (n_circles..g.nodes.len())
                .map(|i| (i, (g.nodes[i].pos - p).norm()))
                .filter(|&(_, d)| d <= SNAP_PX)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((i, _)) = nearest_end {
                let s = &mut sums[i - n_circles];
                s.0 += p;
                s.1 += 1;
                g.nodes[i].pos = s.0 / s.1 as f64;
                return i;
            }
            sums.push((p, 1));
            g.nodes.push(Node { pos: p, radius: None, stroke: None });
            g.nodes.len() - 1
        };
        for seg in segments {
            let (a, b) = seg.endpoints();
            let na = snap(a, &mut g);
            let nb = snap(b, &mut g);
            g.segment_nodes.push((na, nb));
            if na != nb {
                g.adjacent.insert((na.min(nb), na.max(nb)));
                if let Some(w) = seg.width {
                    g.ends.push((na, nb, a, w));
                    g.ends.push((nb, na, b, w));
                }
            }
        }
        g
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacent.contains(&(a.min(b), a.max(b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainKind {
    Arm,
    Leg,
}

/// Expected chain geometry in meters, from the template's rest pose.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub kind: ChainKind,
    /// Left-side joints, proximal to distal.
    pub joints: [JointId; 3],
    pub radii: [f64; 3],
    pub bones: [f64; 2],
    /// Distance from the neck to the proximal joint.
    pub anchor: f64,
}

impl ChainSpec {
    pub fn for_kind(kind: ChainKind, template: &SkeletonTemplate, rest_body: &PrimitiveBody) -> ChainSpec {
        let joints = match kind {
            ChainKind::Arm => [JointId::LShoulder, JointId::LElbow, JointId::LWrist],
            ChainKind::Leg => [JointId::LHip, JointId::LKnee, JointId::LAnkle],
        };
        let radius = |j: JointId| match rest_body.find(PartLabel::JointSphere(j)).map(|p| p.shape) {
            Some(Shape::Sphere { radius }) => radius,
            _ => 0.05,
        };
        let rest = template.rest_positions();
        ChainSpec {
            kind,
            joints,
            radii: joints.map(radius),
            bones: [template.bone_length(joints[1]), template.bone_length(joints[2])],
            anchor: (rest[JointId::Neck] - rest[joints[0]]).norm(),
        }
    }

    pub fn rest(template: &SkeletonTemplate) -> [ChainSpec; 2] {
        let body = crate::body_model::fit_primitives(template, &Pose::identity())
            .expect("rest pose of a validated template fits");
        [ChainSpec::for_kind(ChainKind::Arm, template, &body), ChainSpec::for_kind(ChainKind::Leg, template, &body)]
    }
}

pub type Triple = [Option<usize>; 3];

fn log_cost(observed: f64, expected: f64) -> f64 {
    let v = (observed / expected).ln().abs();
    if v.is_nan() {
        CLIP
    } else {
        v.min(CLIP)
    }
}

/// Bone-length cost: foreshortening only shortens a bone in the image, so
/// short bones cost less than long ones.
fn bone_cost(observed: f64, expected: f64) -> f64 {
    let c = log_cost(observed, expected);
    if observed < expected {
        FORESHORTENED_WEIGHT * c
    } else {
        c
    }
}

/// Cost of reading `triple` as a chain of `spec` at `scale` px/m.
pub fn chain_cost(spec: &ChainSpec, triple: &Triple, graph: &JointGraph, scale: f64, neck: Option<P2>) -> f64 {
    let mut cost = 0.0;
    for (k, slot) in triple.iter().enumerate() {
        cost += match slot {
            None => MISSING_PENALTY,
            Some(n) => match graph.nodes[*n].radius {
                Some(r) => log_cost(r, spec.radii[k] * scale),
                None => INDIRECT_PENALTY,
            },
        };
    }
    let pos = |k: usize| triple[k].map(|n| (n, graph.nodes[n].pos));
    for (k0, k1) in [(0, 1), (1, 2)] {
        if let (Some((a, pa)), Some((b, pb))) = (pos(k0), pos(k1)) {
            cost += bone_cost((pb - pa).norm(), spec.bones[k0] * scale);
            if !graph.is_adjacent(a, b) {
                cost += CONNECT_PENALTY;
            }
        }
    }
    if let (Some((_, pa)), None, Some((_, pc))) = (pos(0), pos(1), pos(2)) {
        cost += bone_cost((pc - pa).norm(), (spec.bones[0] + spec.bones[1]) * scale);
    }
    if let (Some(neck), Some((_, p))) = (neck, pos(0)) {
        cost += log_cost((p - neck).norm(), spec.anchor * scale);
    }
    cost
}

/// Lowest-cost candidates for one chain kind, always including the empty
/// chain.
pub fn chain_candidates(
    spec: &ChainSpec,
    graph: &JointGraph,
    scale: f64,
    neck: Option<P2>,
) -> Vec<(f64, Triple)> {
    let opts: Vec<Option<usize>> = std::iter::once(None).chain((0..graph.nodes.len()).map(Some)).collect();
    let mut out = Vec::new();
    for &p in &opts {
        for &m in &opts {
            for &d in &opts {
                let ids: Vec<usize> = [p, m, d].iter().flatten().copied().collect();
                if ids.is_empty() || (1..ids.len()).any(|i| ids[..i].contains(&ids[i])) {
                    continue;
                }
                let t = [p, m, d];
                out.push((chain_cost(spec, &t, graph, scale, neck), t));
            }
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out.truncate(CANDIDATES_PER_KIND);
    let empty = [None; 3];
    out.push((chain_cost(spec, &empty, graph, scale, neck), empty));
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Two arm chains then two leg chains, sides not yet decided.
    pub chains: [Triple; 4],
    pub cost: f64,
    pub expanded: usize,
}

/// Branch and bound over (arm, arm, leg, leg) slots. The two slots of one
/// kind draw from the same sorted list, so the second takes an index no
/// lower than the first.
pub fn search(arm: &[(f64, Triple)], leg: &[(f64, Triple)]) -> Result<Assignment, InterpretError> {
    let lists = [arm, arm, leg, leg];
    let mins: Vec<f64> = lists.iter().map(|l| l.first().map_or(0.0, |c| c.0)).collect();
    let mut rest_min = [0.0; 5];
    for k in (0..4).rev() {
        rest_min[k] = rest_min[k + 1] + mins[k];
    }
    struct State<'a> {
        lists: [&'a [(f64, Triple)]; 4],
        rest_min: [f64; 5],
        chosen: [usize; 4],
        best: Option<([usize; 4], f64)>,
        expanded: usize,
    }
    fn conflicts(t: &Triple, used: &[Triple]) -> bool {
        t.iter().flatten().any(|n| used.iter().any(|u| u.contains(&Some(*n))))
    }
    fn go(s: &mut State, k: usize, cost: f64, used: &mut Vec<Triple>) -> Result<(), InterpretError> {
        if k == 4 {
            if s.best.is_none_or(|b| cost < b.1) {
                s.best = Some((s.chosen, cost));
            }
            return Ok(());
        }
        let start = if k % 2 == 1 { s.chosen[k - 1] } else { 0 };
        for i in start..s.lists[k].len() {
            let (c, t) = s.lists[k][i];
            if s.best.is_some_and(|b| cost + c + s.rest_min[k + 1] >= b.1) {
                break;
            }
            if conflicts(&t, used) {
                continue;
            }
            s.expanded += 1;
            if s.expanded > SEARCH_BUDGET {
                return Err(InterpretError::SearchBudget(SEARCH_BUDGET));
            }
            s.chosen[k] = i;
            used.push(t);
            go(s, k + 1, cost + c, used)?;
            used.pop();
        }
        Ok(())
    }
    let mut s = State { lists, rest_min, chosen: [0; 4], best: None, expanded: 0 };
    go(&mut s, 0, 0.0, &mut Vec::new())?;
    let (idx, cost) = s.best.expect("empty chains are always available");
    Ok(Assignment {
        chains: [arm[idx[0]].1, arm[idx[1]].1, leg[idx[2]].1, leg[idx[3]].1],
        cost,
        expanded: s.expanded,
    })
}
