//! Batch face of the system: dataset generation, round-trip evaluation and
//! metric reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_sketch, AugmentConfig, SeverityPreset};
use crate::body_model::{
    fit_primitives, forward_kinematics, sample_pose, JointId, PartLabel, PerJoint, Pose, PrimitiveBody, SamplingConfig,
    SkeletonTemplate,
};
use crate::camera::Camera;
use crate::interpret::{interpret_sketch, Interpretation, RawStroke};
use crate::lift::{lift, LiftConfig, LiftResult};
use crate::metrics::{evaluate_pose, median, EvalProtocol, MetricReport, MetricTable};
use crate::render::{node_occluded, render_silhouette, render_sketch, svg, RleMask, VectorSketch};

pub const ANNOTATION_FORMAT: u32 = 1;
/// Poses whose render leaves the canvas are redrawn up to this many times.
const MAX_POSE_ATTEMPTS: u64 = 32;
/// Clean-subset threshold on every stroke's occlusion rating.
pub const CLEAN_MAX_OCCLUSION: f64 = 0.3;
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot access {path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("dataset has no items")]
    EmptyDataset,
    #[error("could not render a pose for item {0}")]
    NoRenderablePose(u64),
    #[error(transparent)]
    Interpret(#[from] crate::interpret::InterpretError),
    #[error(transparent)]
    Lift(#[from] crate::lift::LiftError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// SplitMix64 finalizer over the master seed and item index, so item seeds
/// do not depend on generation order.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub count: u64,
    pub master_seed: u64,
    pub severity: SeverityPreset,
    pub camera: Camera,
    pub sampling: SamplingConfig,
    /// Width of the stored silhouette mask, pixels.
    pub silhouette_resolution: usize,
}

impl GenerateConfig {
    pub fn new(count: u64, master_seed: u64, severity: SeverityPreset) -> Self {
        GenerateConfig {
            count,
            master_seed,
            severity,
            camera: Camera::default(),
            sampling: SamplingConfig::default(),
            silhouette_resolution: 128,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.count == 0 {
            return Err(PipelineError::Config("count must be at least 1".into()));
        }
        self.camera.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRecord {
    pub position: Vector2<f64>,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeRecord {
    pub part: String,
    pub line_type: String,
    pub occlusion: f64,
    pub hidden: bool,
}

/// Ground truth for one generated sketch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub format: u32,
    pub index: u64,
    pub seed: u64,
    pub pose: Pose,
    pub camera: Camera,
    pub joints2d: PerJoint<JointRecord>,
    /// One record per stroke, in sketch-file order.
    pub strokes: Vec<StrokeRecord>,
    pub silhouette: RleMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub index: u64,
    pub seed: u64,
    pub sketch: String,
    pub annotation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub config: GenerateConfig,
    pub augment: AugmentConfig,
    pub items: Vec<ManifestItem>,
    pub notes: Vec<String>,
}

/// A sampled pose with its body and clean render.
#[derive(Debug, Clone)]
pub struct RenderedPose {
    pub seed: u64,
    pub pose: Pose,
    pub body: PrimitiveBody,
    pub sketch: VectorSketch,
}

/// Samples a pose from `seed` and renders it, redrawing from derived seeds
/// when the figure leaves the canvas.
pub fn render_pose(
    seed: u64,
    sampling: &SamplingConfig,
    camera: &Camera,
    template: &SkeletonTemplate,
) -> Result<RenderedPose, PipelineError> {
    for attempt in 0..MAX_POSE_ATTEMPTS {
        let s = if attempt == 0 { seed } else { derive_seed(seed, attempt) };
        let pose = sample_pose(s, sampling, template);
        let Ok(body) = fit_primitives(template, &pose) else { continue };
        if let Ok(sketch) = render_sketch(&body, camera) {
            return Ok(RenderedPose { seed: s, pose, body, sketch });
        }
    }
    Err(PipelineError::NoRenderablePose(seed))
}

/// The primitive a joint sits on, for visibility tests.
fn joint_owner(j: JointId, body: &PrimitiveBody) -> Option<usize> {
    let label = match j {
        JointId::Pelvis | JointId::SpineMid => PartLabel::LowerTorso,
        JointId::Chest => PartLabel::UpperTorso,
        JointId::Neck | JointId::HeadTop => PartLabel::Head,
        j => PartLabel::JointSphere(j),
    };
    body.primitives.iter().position(|p| p.label == label)
}

pub fn annotate(
    index: u64,
    rendered: &RenderedPose,
    sketch: &VectorSketch,
    config: &GenerateConfig,
    template: &SkeletonTemplate,
) -> Result<Annotation, PipelineError> {
    let camera = &config.camera;
    let fk = forward_kinematics(template, &rendered.pose).map_err(|e| PipelineError::Config(e.to_string()))?;
    let projector = crate::camera::Projector::new(camera);
    let mut joints = Vec::with_capacity(JointId::ALL.len());
    for j in JointId::ALL {
        let position = projector.project(&fk[j]).map_err(|e| PipelineError::Config(e.to_string()))?;
        let visible = !node_occluded(&fk[j], joint_owner(j, &rendered.body), &rendered.body, &camera.position);
        joints.push(JointRecord { position, visible });
    }
    let joints2d = PerJoint(joints.try_into().expect("one record per joint"));
    let strokes = sketch
        .strokes
        .iter()
        .map(|s| StrokeRecord {
            part: s.part.to_string(),
            line_type: s.line_type.as_str().to_string(),
            occlusion: s.occlusion,
            hidden: s.hidden,
        })
        .collect();
    let silhouette = render_silhouette(&rendered.body, camera, config.silhouette_resolution).to_rle();
    Ok(Annotation {
        format: ANNOTATION_FORMAT,
        index,
        seed: rendered.seed,
        pose: rendered.pose.clone(),
        camera: camera.clone(),
        joints2d,
        strokes,
        silhouette,
    })
}

fn item_names(index: u64) -> (String, String) {
    (format!("sketches/{index:06}.svg"), format!("annotations/{index:06}.json"))
}

/// Generates `config.count` augmented sketches with annotations under
/// `out`. Items are independent and written in parallel; the manifest is
/// written last.
pub fn generate_dataset(config: &GenerateConfig, out: &Path, template: &SkeletonTemplate) -> Result<Manifest, PipelineError> {
    config.validate()?;
    let augment = AugmentConfig::preset(config.severity);
    for dir in ["sketches", "annotations"] {
        let p = out.join(dir);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    let items: Vec<ManifestItem> = (0..config.count)
        .into_par_iter()
        .map(|i| -> Result<ManifestItem, PipelineError> {
            let seed = derive_seed(config.master_seed, i);
            let rendered = render_pose(seed, &config.sampling, &config.camera, template)?;
            let sketch = augment_sketch(&rendered.sketch, &augment, derive_seed(seed, u64::MAX));
            let annotation = annotate(i, &rendered, &sketch, config, template)?;
            let (sketch_name, ann_name) = item_names(i);
            let sp = out.join(&sketch_name);
            fs::write(&sp, svg::write_svg(&sketch)).map_err(io_err(&sp))?;
            let ap = out.join(&ann_name);
            let text = serde_json::to_string(&annotation).expect("annotation serializes");
            fs::write(&ap, text).map_err(io_err(&ap))?;
            Ok(ManifestItem { index: i, seed, sketch: sketch_name, annotation: ann_name })
        })
        .collect::<Result<_, _>>()?;
    let manifest = Manifest {
        format: ANNOTATION_FORMAT,
        config: config.clone(),
        augment,
        items,
        notes: vec!["dense surface correspondences are not included".into()],
    };
    let mp = out.join(MANIFEST_FILE);
    fs::write(&mp, serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(io_err(&mp))?;
    Ok(manifest)
}

/// Result of interpreting and lifting one sketch against its ground truth.
#[derive(Debug, Clone)]
pub struct RoundTrip {
    pub interpretation: Interpretation,
    pub lift: LiftResult,
    pub report: MetricReport,
    pub interpret_ms: f64,
    pub total_ms: f64,
}

/// Interprets `strokes`, lifts the joints and scores the lifted pose.
pub fn roundtrip_strokes(
    strokes: &[RawStroke],
    truth: &Pose,
    camera: &Camera,
    template: &SkeletonTemplate,
    lift_config: &LiftConfig,
    seed: u64,
) -> Result<RoundTrip, PipelineError> {
    let start = Instant::now();
    let interpretation = interpret_sketch(strokes, template, camera)?;
    let interpret_ms = start.elapsed().as_secs_f64() * 1e3;
    let lifted = lift(&interpretation.joints, template, camera, lift_config, seed)?;
    let total_ms = start.elapsed().as_secs_f64() * 1e3;
    let truth2d = crate::render::project_joints(template, truth, camera).map_err(|e| PipelineError::Config(e.to_string()))?;
    let report = evaluate_pose(
        template,
        &lifted.pose,
        truth,
        Some((&interpretation.joints.positions.0, &truth2d.0)),
        &EvalProtocol::default(),
    )?;
    Ok(RoundTrip { interpretation, lift: lifted, report, interpret_ms, total_ms })
}

/// Counts (joints reported with confidence <= 0.5, joints checked) over
/// the evidence joints of parts whose strokes are all hidden.
pub fn ablation_cases(sketch: &VectorSketch, interpretation: &Interpretation) -> (usize, usize) {
    let mut parts: Vec<PartLabel> = sketch.strokes.iter().map(|s| s.part).collect();
    parts.sort();
    parts.dedup();
    let (mut ok, mut total) = (0, 0);
    for part in parts {
        if sketch.strokes.iter().filter(|s| s.part == part).all(|s| s.hidden) {
            for j in part.evidence_joints() {
                total += 1;
                ok += usize::from(interpretation.joints.confidence[j] <= 0.5);
            }
        }
    }
    (ok, total)
}

/// Mean and median report rows for one named group of results.
pub fn summary_rows(name: &str, reports: &[MetricReport]) -> Vec<(String, MetricReport)> {
    match (MetricReport::mean(reports), MetricReport::median(reports)) {
        (Some(mean), Some(med)) => vec![(format!("{name} mean"), mean), (format!("{name} median"), med)],
        _ => vec![],
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalSummary {
    pub rows: Vec<(String, MetricReport)>,
    pub evaluated: usize,
    pub skipped: usize,
    pub failed: usize,
}

impl EvalSummary {
    pub fn table(&self) -> MetricTable<'_> {
        MetricTable(&self.rows)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Corrupt { path: path.to_path_buf(), reason: e.to_string() })
}

enum ItemOutcome {
    Done(MetricReport),
    Skipped,
    Failed,
}

/// Evaluates a generated dataset. With `clean_only`, each annotated pose
/// is re-rendered without augmentation and only renders whose strokes all
/// rate below [`CLEAN_MAX_OCCLUSION`] are scored. Unreadable items are
/// skipped and counted, never fatal.
pub fn evaluate_dataset(
    dir: &Path,
    clean_only: bool,
    template: &SkeletonTemplate,
    lift_config: &LiftConfig,
) -> Result<EvalSummary, PipelineError> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.items.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let outcomes: Vec<ItemOutcome> = manifest
        .items
        .par_iter()
        .map(|item| {
            let ann = match read_json::<Annotation>(&dir.join(&item.annotation)) {
                Ok(a) if a.format == ANNOTATION_FORMAT => a,
                _ => return ItemOutcome::Skipped,
            };
            let strokes = if clean_only {
                let Ok(body) = fit_primitives(template, &ann.pose) else { return ItemOutcome::Skipped };
                let Ok(sketch) = render_sketch(&body, &ann.camera) else { return ItemOutcome::Skipped };
                if sketch.max_occlusion() >= CLEAN_MAX_OCCLUSION {
                    return ItemOutcome::Skipped;
                }
                RawStroke::from_sketch(&sketch)
            } else {
                let path = dir.join(&item.sketch);
                let parsed = fs::read_to_string(&path).ok().and_then(|t| svg::read_sketch(&t).ok());
                let Some(sketch) = parsed else { return ItemOutcome::Skipped };
                RawStroke::from_sketch(&sketch)
            };
            match roundtrip_strokes(&strokes, &ann.pose, &ann.camera, template, lift_config, item.seed) {
                Ok(rt) => ItemOutcome::Done(rt.report),
                Err(e) => {
                    log::warn!("item {}: {e}", item.index);
                    ItemOutcome::Failed
                }
            }
        })
        .collect();
    let mut summary = EvalSummary::default();
    let mut reports = Vec::new();
    for o in outcomes {
        match o {
            ItemOutcome::Done(r) => reports.push(r),
            ItemOutcome::Skipped => summary.skipped += 1,
            ItemOutcome::Failed => summary.failed += 1,
        }
    }
    if summary.skipped > 0 {
        log::warn!("skipped {} unreadable or filtered items", summary.skipped);
    }
    summary.evaluated = reports.len();
    let name = if clean_only { "clean".to_string() } else { manifest.config.severity.to_string() };
    summary.rows = summary_rows(&name, &reports);
    Ok(summary)
}

/// One pose of an on-the-fly round trip, clean and at each severity.
#[derive(Debug, Clone)]
pub struct RoundTripItem {
    pub index: u64,
    pub seed: u64,
    pub clean: Result<RoundTrip, String>,
    /// Per requested severity: the augmented sketch and its outcome.
    pub augmented: Vec<(SeverityPreset, VectorSketch, Result<RoundTrip, String>)>,
}

/// Samples poses from `master_seed` until `count` have clean renders
/// below [`CLEAN_MAX_OCCLUSION`], then round-trips each one clean and at
/// every severity in `severities`.
pub fn roundtrip_batch(
    master_seed: u64,
    count: usize,
    severities: &[SeverityPreset],
    template: &SkeletonTemplate,
    camera: &Camera,
    lift_config: &LiftConfig,
) -> Vec<RoundTripItem> {
    let sampling = SamplingConfig::default();
    let mut poses = Vec::with_capacity(count);
    let mut i = 0u64;
    while poses.len() < count {
        let seed = derive_seed(master_seed, i);
        if let Ok(r) = render_pose(seed, &sampling, camera, template) {
            if r.sketch.max_occlusion() < CLEAN_MAX_OCCLUSION {
                poses.push((i, seed, r));
            }
        }
        i += 1;
    }
    poses
        .into_par_iter()
        .map(|(index, seed, r)| {
            let run = |sketch: &VectorSketch| {
                roundtrip_strokes(&RawStroke::from_sketch(sketch), &r.pose, camera, template, lift_config, seed)
                    .map_err(|e| e.to_string())
            };
            let clean = run(&r.sketch);
            let augmented = severities
                .iter()
                .map(|&sev| {
                    let sketch = augment_sketch(&r.sketch, &AugmentConfig::preset(sev), derive_seed(seed, u64::MAX));
                    let outcome = run(&sketch);
                    (sev, sketch, outcome)
                })
                .collect();
            RoundTripItem { index, seed, clean, augmented }
        })
        .collect()
}

/// Table-2 style summary of a round-trip batch.
pub fn roundtrip_summary(items: &[RoundTripItem]) -> EvalSummary {
    let mut summary = EvalSummary::default();
    let clean: Vec<MetricReport> = items.iter().filter_map(|it| it.clean.as_ref().ok()).map(|r| r.report).collect();
    summary.failed += items.iter().filter(|it| it.clean.is_err()).count();
    summary.rows.extend(summary_rows("clean", &clean));
    summary.evaluated += clean.len();
    let severities: Vec<SeverityPreset> =
        items.first().map(|it| it.augmented.iter().map(|a| a.0).collect()).unwrap_or_default();
    for (k, sev) in severities.iter().enumerate() {
        let reports: Vec<MetricReport> =
            items.iter().filter_map(|it| it.augmented.get(k)?.2.as_ref().ok()).map(|r| r.report).collect();
        summary.failed += items.iter().filter(|it| it.augmented.get(k).is_some_and(|a| a.2.is_err())).count();
        summary.evaluated += reports.len();
        summary.rows.extend(summary_rows(&sev.to_string(), &reports));
    }
    summary
}

/// Median of one metric over successful round trips.
pub fn median_of(items: &[&RoundTrip], metric: impl Fn(&MetricReport) -> f64) -> f64 {
    median(&items.iter().map(|r| metric(&r.report)).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), seeds.len());
        assert_eq!(derive_seed(42, 7), seeds[7]);
        assert_ne!(derive_seed(43, 7), seeds[7]);
    }

    #[test]
    fn zero_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenerateConfig::new(0, 1, SeverityPreset::Default);
        assert!(matches!(
            generate_dataset(&cfg, dir.path(), SkeletonTemplate::canonical()),
            Err(PipelineError::Config(_))
        ));
    }
}
