//! Sketch interpretation: classify raw strokes, group them into body parts
//! and estimate 2D joints with per-joint confidence.

mod assign;
mod depth;
mod edges;
mod fit;

pub use assign::{chain_cost, search, Assignment, ChainKind, ChainSpec, JointGraph, Node, SEARCH_BUDGET, SNAP_PX};
pub use depth::DEPTH_HINT_THRESHOLD;
pub use edges::{pair_limb_edges, LimbSegment, MIN_SINGLE_EDGE_PX, PAIR_GAP_RANGE, PAIR_MAX_ANGLE_DEG};
pub use fit::{chord_deviation, fit_circle, fit_ellipse, polyline_length, resample, Circle, Ellipse};

use nalgebra::{Complex, Vector2};
use serde::{Deserialize, Serialize};

use crate::body_model::{JointId, PartLabel, PerJoint, SkeletonTemplate};
use crate::camera::Camera;
use crate::lift::Joints2D;
use crate::render::{Mask, VectorSketch};
use fit::{centroid, segment_distance, P2};

/// Resampling step applied to every input stroke, pixels.
pub const RESAMPLE_SPACING_PX: f64 = 2.0;
/// A stroke is closed when its endpoint gap is below this fraction of its length.
pub const CLOSURE_FRACTION: f64 = 0.15;
/// Circle-fit RMS residual gate, as a fraction of the radius.
pub const CIRCLE_RESIDUAL_FRACTION: f64 = 0.08;
/// Aspect ratio range of a head ellipse.
pub const HEAD_ASPECT: (f64, f64) = (1.2, 2.2);
/// Face marks are shorter than this fraction of the head's minor axis.
pub const FACE_MARK_FRACTION: f64 = 0.5;
/// Head candidates must exceed the median circle radius by this factor.
const HEAD_MIN_RADIUS_RATIO: f64 = 1.5;
/// Open strokes bending further than this fraction of their chord (with a
/// 2 px floor) are not limb edges.
const EDGE_STRAIGHTNESS: f64 = 0.1;
/// Face-mark crossing sits this far above the head centre at rest, in
/// units of the semi-major axis (the eye line's elevation).
const FACE_PITCH_BIAS: f64 = 0.15;
/// Quantization threshold for the head-turn hint.
const HINT_THRESHOLD: f64 = 0.25;
/// Outline ends farther than this many circle radii from a joint circle
/// are not fused with it.
const FUSE_MAX_DIST: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InterpretError {
    #[error("sketch has no strokes")]
    Empty,
    #[error("no head and no torso candidate found")]
    Uninterpretable,
    #[error("part assignment exceeded the search budget of {0} nodes")]
    SearchBudget(usize),
}

/// Unlabelled input polyline in canvas pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RawStroke {
    pub points: Vec<Vector2<f64>>,
}

impl RawStroke {
    pub fn new(points: Vec<Vector2<f64>>) -> Self {
        RawStroke { points }
    }

    /// Visible strokes of a rendered sketch with their labels dropped.
    pub fn from_sketch(sketch: &VectorSketch) -> Vec<RawStroke> {
        sketch.visible_strokes().map(|s| RawStroke::new(s.points())).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StrokeClass {
    JointCircle(Circle),
    HeadEllipse(Ellipse),
    LimbEdge,
    FaceMark,
    Unknown,
}

impl StrokeClass {
    pub fn name(&self) -> &'static str {
        match self {
            StrokeClass::JointCircle(_) => "joint_circle",
            StrokeClass::HeadEllipse(_) => "head_ellipse",
            StrokeClass::LimbEdge => "limb_edge",
            StrokeClass::FaceMark => "face_mark",
            StrokeClass::Unknown => "unknown",
        }
    }
}

/// Shape facts about one resampled stroke, before any sketch context.
#[derive(Debug, Clone)]
struct StrokeShape {
    points: Vec<P2>,
    length: f64,
    closed: bool,
    circle: Option<Circle>,
    ellipse: Option<Ellipse>,
}

impl StrokeShape {
    fn new(raw: &[P2]) -> StrokeShape {
        let points = resample(raw, RESAMPLE_SPACING_PX);
        let length = polyline_length(&points);
        let closed = points.len() >= 4
            && length > 0.0
            && (points[0] - points[points.len() - 1]).norm() < CLOSURE_FRACTION * length;
        let (circle, ellipse) = if closed {
            // Drop the repeated closing node so it does not weigh twice.
            let body = if points[0] == points[points.len() - 1] { &points[..points.len() - 1] } else { &points[..] };
            (fit_circle(body), fit_ellipse(body))
        } else {
            (None, None)
        };
        StrokeShape { points, length, closed, circle, ellipse }
    }

    fn circle_like(&self) -> Option<Circle> {
        self.circle.filter(|c| c.residual < CIRCLE_RESIDUAL_FRACTION * c.radius)
    }

    fn head_like(&self) -> Option<Ellipse> {
        self.ellipse.filter(|e| (HEAD_ASPECT.0..=HEAD_ASPECT.1).contains(&e.aspect()))
    }

    fn is_face_mark(&self, head: &Ellipse) -> bool {
        !self.closed
            && self.length < FACE_MARK_FRACTION * 2.0 * head.semi_minor
            && head.normalized(&centroid(&self.points)).norm() < 1.0
            && self.points.iter().all(|p| head.normalized(p).norm() < 1.2)
    }

    fn is_edge(&self) -> bool {
        !self.closed
            && self.points.len() >= 2
            && chord_deviation(&self.points) <= (EDGE_STRAIGHTNESS * self.length).max(2.0)
    }
}

/// Classifies a single stroke. `head` is the sketch's head ellipse, needed
/// to recognise face marks.
pub fn classify_stroke(points: &[Vector2<f64>], head: Option<&Ellipse>) -> StrokeClass {
    classify_shape(&StrokeShape::new(points), head)
}

fn classify_shape(shape: &StrokeShape, head: Option<&Ellipse>) -> StrokeClass {
    if shape.points.len() < 2 || shape.length == 0.0 {
        return StrokeClass::Unknown;
    }
    if shape.closed {
        let ellipse = shape.head_like();
        return match (shape.circle_like(), ellipse) {
            (Some(c), e) if e.is_none_or(|e| e.aspect() < HEAD_ASPECT.0) => StrokeClass::JointCircle(c),
            (Some(c), None) => StrokeClass::JointCircle(c),
            (_, Some(e)) => StrokeClass::HeadEllipse(e),
            _ => StrokeClass::Unknown,
        };
    }
    if head.is_some_and(|h| shape.is_face_mark(h)) {
        StrokeClass::FaceMark
    } else if shape.is_edge() {
        StrokeClass::LimbEdge
    } else {
        StrokeClass::Unknown
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interpretation {
    pub joints: Joints2D,
    /// Union of 2D part stamps, canvas resolution.
    pub silhouette: Mask,
    /// Part label per input stroke, `None` when unassigned.
    pub labels: Vec<Option<PartLabel>>,
    pub classes: Vec<StrokeClass>,
    /// Sketch scale, pixels per meter.
    pub scale: f64,
    pub search_expanded: usize,
}

struct Context<'a> {
    template: &'a SkeletonTemplate,
    rest: PerJoint<nalgebra::Vector3<f64>>,
    specs: [ChainSpec; 2],
}

impl Context<'_> {
    fn spec_for(&self, limb: PartLabel) -> &ChainSpec {
        use PartLabel::*;
        if matches!(limb, LUpperArm | RUpperArm | LForearm | RForearm) {
            &self.specs[0]
        } else {
            &self.specs[1]
        }
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Signed side of `p` relative to the line through `base` along `axis`;
/// positive is the figure's left for an upright figure facing the camera.
fn side(axis: &P2, base: &P2, p: &P2) -> f64 {
    let v = p - base;
    axis.x * v.y - axis.y * v.x
}

/// Interprets a sketch of raw strokes. Joint circles, the head ellipse
/// and paired limb edges form a joint graph; a branch-and-bound search
/// assigns graph nodes to the limb chains. Torso and head joints follow
/// from the assigned chains and the head ellipse. Joints without stroke
/// evidence are filled from the template with confidence 0.
pub fn interpret_sketch(
    strokes: &[RawStroke],
    template: &SkeletonTemplate,
    camera: &Camera,
) -> Result<Interpretation, InterpretError> {
    if strokes.iter().all(|s| s.points.len() < 2) {
        return Err(InterpretError::Empty);
    }
    let ctx = Context { template, rest: template.rest_positions(), specs: ChainSpec::rest(template) };
    let shapes: Vec<StrokeShape> = strokes.iter().map(|s| StrokeShape::new(&s.points)).collect();

    // Head: the largest head-like closed stroke that is clearly bigger than
    // the joint circles.
    let circle_radii: Vec<f64> = shapes.iter().filter_map(|s| s.closed.then(|| s.circle_like()).flatten()).map(|c| c.radius).collect();
    let min_head = median(circle_radii).map_or(0.0, |m| HEAD_MIN_RADIUS_RATIO * m);
    let head_idx = shapes
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.closed.then(|| s.head_like()).flatten().map(|e| (i, e)))
        .filter(|(_, e)| e.semi_major >= min_head)
        .max_by(|a, b| a.1.semi_major.total_cmp(&b.1.semi_major))
        .map(|(i, _)| i);
    let head = head_idx.and_then(|i| shapes[i].head_like());

    let mut classes: Vec<StrokeClass> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if Some(i) == head_idx {
                return StrokeClass::HeadEllipse(head.unwrap());
            }
            match classify_shape(s, head.as_ref()) {
                // Only one head per sketch; other ellipses may still be circles.
                StrokeClass::HeadEllipse(_) => s.circle.filter(|c| c.residual < 2.0 * CIRCLE_RESIDUAL_FRACTION * c.radius)
                    .map_or(StrokeClass::Unknown, StrokeClass::JointCircle),
                c => c,
            }
        })
        .collect();

    let circles: Vec<(usize, P2, f64)> = classes
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match c {
            StrokeClass::JointCircle(c) => Some((i, c.center, c.radius)),
            _ => None,
        })
        .collect();
    let edge_ids: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == StrokeClass::LimbEdge).collect();
    if head.is_none() && circles.len() < 2 && edge_ids.len() < 2 {
        return Err(InterpretError::Uninterpretable);
    }

    let head_len = (ctx.rest[JointId::HeadTop] - ctx.rest[JointId::Neck]).norm();
    let scale = match head {
        Some(h) => 2.0 * h.semi_major / head_len,
        None => {
            let expected: Vec<f64> = ctx.specs.iter().flat_map(|s| s.radii).collect();
            match median(circles.iter().map(|c| c.2).collect()) {
                Some(r) => r / median(expected).unwrap(),
                None => return Err(InterpretError::Uninterpretable),
            }
        }
    };

    let edge_points: Vec<Vec<P2>> = edge_ids.iter().map(|&i| shapes[i].points.clone()).collect();
    let segments = pair_limb_edges(&edge_points);
    let graph = JointGraph::build(&circles, &segments);

    // Neck is the head end nearer the body.
    let body_center = if circles.is_empty() {
        edge_points.iter().flatten().copied().collect::<Vec<_>>()
    } else {
        circles.iter().map(|c| c.1).collect()
    };
    let body_center = (!body_center.is_empty()).then(|| centroid(&body_center));
    let head_ends = head.map(|h| {
        let (a, b) = h.major_endpoints();
        match body_center {
            Some(c) if (b - c).norm() < (a - c).norm() => (b, a),
            Some(_) => (a, b),
            // Without any body, assume an upright head.
            None => if a.y > b.y { (a, b) } else { (b, a) },
        }
    });
    let neck = head_ends.map(|e| e.0);

    let arm = assign::chain_candidates(&ctx.specs[0], &graph, scale, neck);
    let leg = assign::chain_candidates(&ctx.specs[1], &graph, scale, neck);
    let assignment = search(&arm, &leg)?;

    let mut out = Builder::new(&graph, scale);
    out.place_chains(&ctx, &assignment, neck);
    let scales = out.joint_scales(&ctx, &classes);
    // The outline's ends only approximate the head joints, and small
    // length errors on a bone seen side-on swing its depth a long way.
    if let Some((n, t)) = head_ends {
        out.set(JointId::Neck, n, 0.5);
        out.set(JointId::HeadTop, t, 0.5);
    }
    for (i, c) in classes.iter().enumerate() {
        match c {
            StrokeClass::HeadEllipse(_) => out.labels_set(i, PartLabel::Head),
            StrokeClass::FaceMark => out.labels_set(i, PartLabel::FaceMark),
            _ => {}
        }
    }
    out.labels.resize(classes.len(), None);
    for (i, _, _) in &circles {
        if let Some(j) = out.circle_joint.get(i) {
            out.labels[*i] = Some(PartLabel::JointSphere(*j));
        }
    }
    out.place_torso(&ctx, &shapes, &classes);
    out.fill_missing(&ctx, camera);
    let head_hint = head.and_then(|h| head_hint(&h, &shapes, &classes));
    let arcs: Vec<&[P2]> = shapes
        .iter()
        .zip(&classes)
        .filter(|(s, c)| !s.closed && matches!(c, StrokeClass::LimbEdge | StrokeClass::Unknown))
        .map(|(s, _)| &s.points[..])
        .collect();
    let depth = depth::depth_hints(&depth::rim_bones(template), template, &out.positions, &out.found, &scales.0, &arcs);
    let depth_hints = depth.0.iter().any(|&h| h != 0).then_some(depth);

    // Unclassified strokes that got a part label are still unknown shapes,
    // but limb edges and arcs now carry the part they belong to.
    for (i, c) in classes.iter_mut().enumerate() {
        if *c == StrokeClass::Unknown && out.labels[i].is_some_and(|l| l.is_limb() || l.is_torso()) {
            *c = StrokeClass::LimbEdge;
        }
    }
    let silhouette = out.silhouette(&ctx, head.as_ref(), camera);
    Ok(Interpretation {
        joints: Joints2D { positions: out.positions, confidence: out.confidence, head_hint, depth_hints },
        silhouette,
        labels: out.labels,
        classes,
        scale,
        search_expanded: assignment.expanded,
    })
}

/// Mutable interpretation state shared by the placement steps.
struct Builder<'g> {
    graph: &'g JointGraph,
    scale: f64,
    positions: PerJoint<P2>,
    confidence: PerJoint<f64>,
    found: PerJoint<bool>,
    labels: Vec<Option<PartLabel>>,
    /// Circle stroke index to joint.
    circle_joint: std::collections::HashMap<usize, JointId>,
    /// Limb bones whose nodes are joined by a segment.
    supported: Vec<PartLabel>,
}

impl<'g> Builder<'g> {
    fn new(graph: &'g JointGraph, scale: f64) -> Self {
        Builder {
            graph,
            scale,
            positions: PerJoint::splat(Vector2::zeros()),
            confidence: PerJoint::splat(0.0),
            found: PerJoint::splat(false),
            labels: Vec::new(),
            circle_joint: Default::default(),
            supported: Vec::new(),
        }
    }

    fn set(&mut self, j: JointId, p: P2, confidence: f64) {
        self.positions[j] = p;
        self.confidence[j] = confidence;
        self.found[j] = true;
    }

    fn labels_set(&mut self, i: usize, l: PartLabel) {
        if self.labels.len() <= i {
            self.labels.resize(i + 1, None);
        }
        self.labels[i] = Some(l);
    }

    fn place_chains(&mut self, ctx: &Context, a: &Assignment, neck: Option<P2>) {
        let g = self.graph;
        let rep = |t: &assign::Triple| -> Option<P2> {
            t[0].map(|n| g.nodes[n].pos).or_else(|| {
                let pts: Vec<P2> = t.iter().flatten().map(|&n| g.nodes[n].pos).collect();
                (!pts.is_empty()).then(|| centroid(&pts))
            })
        };
        let mid = |x: Option<P2>, y: Option<P2>| x.zip(y).map(|(x, y)| (x + y) / 2.0);
        let prox = |t: &assign::Triple| t[0].map(|n| g.nodes[n].pos);
        let chest = mid(prox(&a.chains[0]), prox(&a.chains[1])).or(neck);
        let pelvis = mid(prox(&a.chains[2]), prox(&a.chains[3])).or_else(|| {
            let pts: Vec<P2> = a.chains[2..].iter().flat_map(|t| t.iter().flatten()).map(|&n| g.nodes[n].pos).collect();
            (!pts.is_empty()).then(|| centroid(&pts))
        });
        let axis = match (chest, pelvis) {
            (Some(c), Some(p)) if (c - p).norm() > 1e-9 => (c - p).normalize(),
            _ => Vector2::new(0.0, -1.0),
        };
        for (pair, base, spec) in [(0, chest, &ctx.specs[0]), (2, pelvis, &ctx.specs[1])] {
            let (ta, tb) = (&a.chains[pair], &a.chains[pair + 1]);
            let (ra, rb) = (rep(ta), rep(tb));
            let base = base.or_else(|| mid(ra, rb)).unwrap_or_else(Vector2::zeros);
            let score = |r: Option<P2>| r.map(|r| side(&axis, &base, &r));
            // true when chain a is the figure's left.
            let a_left = match (score(ra), score(rb)) {
                (Some(x), Some(y)) if (x - y).abs() > 1e-9 => x > y,
                (Some(_), Some(_)) => ra.unwrap().x >= rb.unwrap().x,
                (Some(x), None) => x > 0.0 || (x == 0.0 && ra.unwrap().x >= base.x),
                (None, Some(y)) => !(y > 0.0 || (y == 0.0 && rb.unwrap().x >= base.x)),
                (None, None) => true,
            };
            let (left, right) = if a_left { (ta, tb) } else { (tb, ta) };
            self.place_chain(spec, left, false);
            self.place_chain(spec, right, true);
        }
    }

    fn place_chain(&mut self, spec: &ChainSpec, t: &assign::Triple, mirror: bool) {
        let joints = spec.joints.map(|j| if mirror { j.mirror() } else { j });
        let bone_ok = |k0: usize, k1: usize| match (t[k0], t[k1]) {
            (Some(a), Some(b)) => self.graph.is_adjacent(a, b),
            _ => false,
        };
        let ok = [bone_ok(0, 1), bone_ok(1, 2)];
        for (k, bone) in ok.iter().enumerate() {
            if *bone {
                self.supported.push(PartLabel::limb_between(joints[k], joints[k + 1]).unwrap());
            }
        }
        for k in 0..3 {
            let Some(n) = t[k] else { continue };
            let node = &self.graph.nodes[n];
            let adjoining_ok = match k {
                0 => ok[0],
                1 => ok[0] && ok[1],
                _ => ok[1],
            };
            let conf = if node.radius.is_some() && adjoining_ok { 1.0 } else { 0.5 };
            // Circles and the limb outlines meeting them are drawn
            // separately; average the circle centre with the ends of the
            // outlines that are as wide as the limb and end near it.
            let mut pos = node.pos;
            if let Some(r) = node.radius {
                let neighbours = [k.checked_sub(1).and_then(|i| t[i]), t.get(k + 1).copied().flatten()];
                let ends: Vec<P2> = self
                    .graph
                    .ends
                    .iter()
                    .filter(|(a, b, e, w)| {
                        let width = 2.0 * r / crate::body_model::SPHERE_SCALE;
                        *a == n
                            && neighbours.contains(&Some(*b))
                            && (w / width - 1.0).abs() <= 0.35
                            && (e - node.pos).norm() <= FUSE_MAX_DIST * r
                    })
                    .map(|e| e.2)
                    .collect();
                pos = (node.pos + ends.iter().sum::<P2>()) / (1 + ends.len()) as f64;
            }
            self.set(joints[k], pos, conf);
            if let Some(s) = node.stroke {
                self.circle_joint.insert(s, joints[k]);
            }
        }
    }

    /// Sketch scale at each joint and overall, pixels per meter. Joint
    /// spheres are never foreshortened, so their circles give the scale
    /// where they are; elsewhere the median of those applies.
    fn joint_scales(&self, ctx: &Context, classes: &[StrokeClass]) -> (PerJoint<f64>, f64) {
        let mut local: PerJoint<Option<f64>> = PerJoint::splat(None);
        for (&i, &j) in &self.circle_joint {
            let StrokeClass::JointCircle(c) = &classes[i] else { continue };
            let sphere = ctx
                .specs
                .iter()
                .find_map(|s| s.joints.iter().position(|&k| k == j || k.mirror() == j).map(|k| s.radii[k]));
            local[j] = sphere.map(|r| c.radius / r);
        }
        let overall = median(local.0.iter().flatten().copied().collect()).unwrap_or(self.scale);
        (PerJoint::from_fn(|j| local[j].unwrap_or(overall)), overall)
    }

    /// Bones used to label open strokes: (part, from, to, expected radius in px).
    fn label_bones(&self, ctx: &Context, pelvis: Option<P2>, chest: Option<P2>) -> Vec<(PartLabel, P2, P2, f64)> {
        let mut bones = Vec::new();
        for &(part, a, b) in PartLabel::LIMBS.iter() {
            if self.found[a] && self.found[b] {
                let spec = ctx.spec_for(part);
                let r = spec.radii[0] / crate::body_model::SPHERE_SCALE * self.scale;
                bones.push((part, self.positions[a], self.positions[b], r));
            }
        }
        if let (Some(p), Some(c)) = (pelvis, chest) {
            let f = lower_fraction(ctx);
            let s = p + (c - p) * f;
            let half = (ctx.rest[JointId::LShoulder] - ctx.rest[JointId::Chest]).norm() * self.scale;
            bones.push((PartLabel::LowerTorso, p, s, half * 0.6));
            bones.push((PartLabel::UpperTorso, s, c, half));
        }
        bones
    }

    fn place_torso(&mut self, ctx: &Context, shapes: &[StrokeShape], classes: &[StrokeClass]) {
        use JointId::*;
        let both = |b: &Self, x: JointId, y: JointId| (b.found[x] && b.found[y]).then(|| (b.positions[x] + b.positions[y]) / 2.0);
        let pelvis = both(self, LHip, RHip);
        let chest = both(self, LShoulder, RShoulder);

        // Label open strokes by the nearest bone, measured in expected radii.
        let bones = self.label_bones(ctx, pelvis, chest);
        for (i, shape) in shapes.iter().enumerate() {
            if self.labels[i].is_some() || !matches!(classes[i], StrokeClass::LimbEdge | StrokeClass::Unknown) {
                continue;
            }
            let best = bones
                .iter()
                .map(|(part, a, b, r)| {
                    let d = shape.points.iter().map(|p| segment_distance(p, a, b)).sum::<f64>() / shape.points.len() as f64;
                    (*part, d / (r + 4.0))
                })
                .min_by(|x, y| x.1.total_cmp(&y.1));
            if let Some((part, score)) = best {
                if score <= 1.5 {
                    self.labels[i] = Some(part);
                }
            }
        }
        let has = |b: &Self, part: PartLabel| b.labels.contains(&Some(part));
        let lower = has(self, PartLabel::LowerTorso);
        let upper = has(self, PartLabel::UpperTorso);
        if let Some(p) = pelvis {
            self.set(Pelvis, p, if lower { 1.0 } else { 0.5 });
        }
        if let Some(c) = chest {
            self.set(Chest, c, if upper { 1.0 } else { 0.5 });
        }
        let (Some(p), Some(c)) = (pelvis, chest) else { return };
        let guess = p + (c - p) * lower_fraction(ctx);
        // Waist: the torso edge endpoints nearest the interpolated guess,
        // midway between the two laterally outermost ones.
        let axis = (c - p).normalize();
        let reach = 0.25 * (c - p).norm();
        let mut ends: Vec<P2> = Vec::new();
        for (i, shape) in shapes.iter().enumerate() {
            if !matches!(self.labels[i], Some(PartLabel::LowerTorso | PartLabel::UpperTorso)) || !shape.is_edge() {
                continue;
            }
            let (a, b) = (shape.points[0], *shape.points.last().unwrap());
            let e = if (a - guess).norm() <= (b - guess).norm() { a } else { b };
            if (e - guess).dot(&axis).abs() <= reach {
                ends.push(e);
            }
        }
        let lateral = |q: &P2| side(&axis, &guess, q);
        let lo = ends.iter().min_by(|x, y| lateral(x).total_cmp(&lateral(y)));
        let hi = ends.iter().max_by(|x, y| lateral(x).total_cmp(&lateral(y)));
        match (lo, hi) {
            (Some(l), Some(h)) if lower && upper && lateral(l) < 0.0 && lateral(h) > 0.0 => {
                self.set(SpineMid, (l + h) / 2.0, 0.5);
            }
            _ => self.set(SpineMid, guess, 0.25),
        }
    }

    /// Fills joints without evidence from the template's frontal rest
    /// layout, fitted to the found joints by a 2D similarity.
    fn fill_missing(&mut self, ctx: &Context, camera: &Camera) {
        let layout = |j: JointId| Complex::new(-ctx.rest[j].x, -ctx.rest[j].y);
        let known: Vec<JointId> = JointId::ALL.into_iter().filter(|&j| self.found[j]).collect();
        let (a, b) = if known.len() >= 2 {
            let zc = known.iter().map(|&j| layout(j)).sum::<Complex<f64>>() / known.len() as f64;
            let wc = known.iter().map(|&j| Complex::new(self.positions[j].x, self.positions[j].y)).sum::<Complex<f64>>()
                / known.len() as f64;
            let mut num = Complex::new(0.0, 0.0);
            let mut den = 0.0;
            for &j in &known {
                let z = layout(j) - zc;
                let w = Complex::new(self.positions[j].x, self.positions[j].y) - wc;
                num += z.conj() * w;
                den += z.norm_sqr();
            }
            let a = if den > 0.0 { num / den } else { Complex::new(self.scale, 0.0) };
            (a, wc - a * zc)
        } else {
            let anchor = known.first().map_or_else(
                || {
                    let c = camera.center_px();
                    (Complex::new(c.x, c.y), Complex::new(0.0, 0.0))
                },
                |&j| (Complex::new(self.positions[j].x, self.positions[j].y), layout(j)),
            );
            let a = Complex::new(self.scale, 0.0);
            (a, anchor.0 - a * anchor.1)
        };
        for j in JointId::ALL {
            if !self.found[j] {
                let w = a * layout(j) + b;
                self.positions[j] = Vector2::new(w.re, w.im);
                self.confidence[j] = 0.0;
            }
        }
    }

    fn silhouette(&self, ctx: &Context, head: Option<&Ellipse>, camera: &Camera) -> Mask {
        let mut mask = Mask::new(camera.width as usize, camera.height as usize);
        if let Some(h) = head {
            let r = h.semi_major;
            stamp(&mut mask, h.center, r, |p| h.normalized(p).norm() <= 1.0);
        }
        for n in &self.graph.nodes {
            if let Some(r) = n.radius {
                stamp(&mut mask, n.pos, r, |p| (p - n.pos).norm() <= r);
            }
        }
        let s = self.scale;
        let mut capsules: Vec<(JointId, JointId, f64, f64)> = Vec::new();
        for &(part, a, b) in PartLabel::LIMBS.iter() {
            let spec = ctx.spec_for(part);
            let k = spec.joints.iter().position(|j| *j == a || j.mirror() == a).unwrap_or(0);
            let r0 = spec.radii[k] / crate::body_model::SPHERE_SCALE;
            let r1 = spec.radii[(k + 1).min(2)] / crate::body_model::SPHERE_SCALE;
            capsules.push((a, b, r0 * s, r1 * s));
        }
        let shoulder = (ctx.rest[JointId::LShoulder] - ctx.rest[JointId::Chest]).norm() * s;
        let hip = (ctx.rest[JointId::LHip] - ctx.rest[JointId::Pelvis]).norm() * s;
        capsules.push((JointId::Pelvis, JointId::SpineMid, hip, 0.5 * (hip + shoulder) * 0.6));
        capsules.push((JointId::SpineMid, JointId::Chest, 0.5 * (hip + shoulder) * 0.6, shoulder));
        for (a, b, ra, rb) in capsules {
            if self.confidence[a] <= 0.0 || self.confidence[b] <= 0.0 {
                continue;
            }
            let (pa, pb) = (self.positions[a], self.positions[b]);
            let d = pb - pa;
            let l2 = d.norm_squared().max(1e-12);
            let reach = (pb - pa).norm() / 2.0 + ra.max(rb);
            stamp(&mut mask, (pa + pb) / 2.0, reach, |p| {
                let t = ((p - pa).dot(&d) / l2).clamp(0.0, 1.0);
                (pa + d * t - p).norm() <= ra + (rb - ra) * t
            });
        }
        mask
    }
}

fn lower_fraction(ctx: &Context) -> f64 {
    let lower = ctx.template.bone_length(JointId::SpineMid);
    lower / (lower + ctx.template.bone_length(JointId::Chest))
}

/// Sets every pixel whose centre passes `inside`, within `radius` of `center`.
fn stamp(mask: &mut Mask, center: P2, radius: f64, inside: impl Fn(&P2) -> bool) {
    let x0 = (center.x - radius).floor().max(0.0) as usize;
    let y0 = (center.y - radius).floor().max(0.0) as usize;
    let x1 = ((center.x + radius).ceil().max(0.0) as usize).min(mask.width);
    let y1 = ((center.y + radius).ceil().max(0.0) as usize).min(mask.height);
    for y in y0..y1 {
        for x in x0..x1 {
            if inside(&Vector2::new(x as f64 + 0.5, y as f64 + 0.5)) {
                mask.set(x, y, true);
            }
        }
    }
}

/// Quantized head turn from where the face marks cross inside the head.
fn head_hint(head: &Ellipse, shapes: &[StrokeShape], classes: &[StrokeClass]) -> Option<[i8; 2]> {
    let marks: Vec<&StrokeShape> =
        shapes.iter().zip(classes).filter(|(_, c)| **c == StrokeClass::FaceMark).map(|(s, _)| s).collect();
    if marks.is_empty() {
        return None;
    }
    let all: Vec<P2> = marks.iter().flat_map(|s| s.points.iter().copied()).collect();
    let mut face = centroid(&all);
    if let [m0, m1] = marks[..] {
        let (a, b) = (m0.points[0], *m0.points.last().unwrap());
        let (c, d) = (m1.points[0], *m1.points.last().unwrap());
        let (r, s) = (b - a, d - c);
        let den = r.x * s.y - r.y * s.x;
        if den.abs() > 1e-9 {
            let t = ((c - a).x * s.y - (c - a).y * s.x) / den;
            let x = a + r * t;
            if head.normalized(&x).norm() <= 1.0 {
                face = x;
            }
        }
    }
    let off = face - head.center;
    let q = |v: f64| {
        if v > HINT_THRESHOLD {
            1
        } else if v < -HINT_THRESHOLD {
            -1
        } else {
            0
        }
    };
    Some([q(off.x / head.semi_minor), q(-off.y / head.semi_major - FACE_PITCH_BIAS)])
}
