//! Part-aware sketch augmentation: per-part translation, per-node jitter,
//! occlusion-weighted hiding and random hiding.
//!
//! Hidden strokes keep their geometry and labels; only the `hidden` flag
//! changes, so supervision can still tell "not drawn" from "never existed".

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body_model::PartLabel;
use crate::render::{Stroke, VectorSketch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeverityPreset {
    Light,
    Default,
    Heavy,
}

impl SeverityPreset {
    pub const ALL: [SeverityPreset; 3] = [SeverityPreset::Light, SeverityPreset::Default, SeverityPreset::Heavy];

    pub fn multiplier(self) -> f64 {
        match self {
            SeverityPreset::Light => 0.9,
            SeverityPreset::Default => 1.0,
            SeverityPreset::Heavy => 1.1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SeverityPreset::Light => "light",
            SeverityPreset::Default => "default",
            SeverityPreset::Heavy => "heavy",
        }
    }
}

impl fmt::Display for SeverityPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown severity `{0}` (expected light, default or heavy)")]
pub struct UnknownSeverity(pub String);

impl FromStr for SeverityPreset {
    type Err = UnknownSeverity;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| UnknownSeverity(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid augmentation config: {0}")]
pub struct AugmentConfigError(String);

/// Augmentation parameters, in pixels at a 512 px canvas. The severity
/// multiplier scales both sigmas, the random hide probability and the
/// occlusion gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub translate_mean: [f64; 2],
    pub translate_sigma: f64,
    pub jitter_mean: [f64; 2],
    pub jitter_sigma: f64,
    pub p_hide_random: f64,
    pub occlusion_gain: f64,
    pub severity: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            translate_mean: [0.0, 0.0],
            translate_sigma: 6.0,
            jitter_mean: [0.0, 0.0],
            jitter_sigma: 1.5,
            p_hide_random: 0.08,
            occlusion_gain: 0.9,
            severity: 1.0,
        }
    }
}

impl AugmentConfig {
    pub fn preset(preset: SeverityPreset) -> Self {
        AugmentConfig { severity: preset.multiplier(), ..Default::default() }
    }

    /// Everything zeroed: augmentation is the identity.
    pub fn none() -> Self {
        AugmentConfig {
            translate_sigma: 0.0,
            jitter_sigma: 0.0,
            p_hide_random: 0.0,
            occlusion_gain: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentConfigError> {
        let finite = self.translate_mean.iter().chain(&self.jitter_mean).all(|v| v.is_finite());
        if !finite {
            return Err(AugmentConfigError("means must be finite".into()));
        }
        if !(self.severity > 0.0 && self.severity.is_finite()) {
            return Err(AugmentConfigError(format!("severity {} must be positive", self.severity)));
        }
        for (name, v) in [
            ("translate_sigma", self.translate_sigma),
            ("jitter_sigma", self.jitter_sigma),
            ("occlusion_gain", self.occlusion_gain),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(AugmentConfigError(format!("{name} = {v} must be >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.p_hide_random) {
            return Err(AugmentConfigError(format!("p_hide_random = {} outside [0, 1]", self.p_hide_random)));
        }
        Ok(())
    }

    pub fn effective_translate_sigma(&self) -> f64 {
        self.translate_sigma * self.severity
    }

    pub fn effective_jitter_sigma(&self) -> f64 {
        self.jitter_sigma * self.severity
    }

    pub fn effective_p_hide(&self) -> f64 {
        (self.p_hide_random * self.severity).clamp(0.0, 1.0)
    }

    pub fn effective_gain(&self) -> f64 {
        self.occlusion_gain * self.severity
    }
}

fn gaussian_2d(rng: &mut impl Rng, mean: [f64; 2], sigma: f64) -> Vector2<f64> {
    if sigma == 0.0 {
        return Vector2::new(mean[0], mean[1]);
    }
    let n = Normal::new(0.0, sigma).expect("sigma validated");
    Vector2::new(mean[0] + n.sample(rng), mean[1] + n.sample(rng))
}

/// Parts in order of first appearance, so RNG draws are stable.
fn parts_in_order(sketch: &VectorSketch) -> Vec<PartLabel> {
    let mut parts = Vec::new();
    for s in &sketch.strokes {
        if !parts.contains(&s.part) {
            parts.push(s.part);
        }
    }
    parts
}

/// Shifts every node of every stroke labeled `part` by one offset.
pub fn translate_part(sketch: &mut VectorSketch, part: PartLabel, offset: Vector2<f64>) {
    for stroke in sketch.strokes.iter_mut().filter(|s| s.part == part) {
        for node in &mut stroke.nodes {
            node.position += offset;
        }
    }
}

fn is_closed(stroke: &Stroke) -> bool {
    let n = stroke.nodes.len();
    n > 2 && stroke.nodes[0].position == stroke.nodes[n - 1].position
}

/// Three-tap moving average. Closed strokes wrap around; open-stroke
/// endpoints average over the neighbours they have.
pub fn smooth3(values: &[Vector2<f64>], closed: bool) -> Vec<Vector2<f64>> {
    let n = values.len();
    (0..n)
        .map(|i| {
            if closed {
                (values[(i + n - 1) % n] + values[i] + values[(i + 1) % n]) / 3.0
            } else {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(n - 1);
                values[lo..=hi].iter().sum::<Vector2<f64>>() / (hi - lo + 1) as f64
            }
        })
        .collect()
}

/// Adds smoothed Gaussian noise to every node. The noise field, not the
/// stroke itself, is smoothed, so a zero sigma leaves geometry untouched.
pub fn jitter_stroke(stroke: &mut Stroke, mean: [f64; 2], sigma: f64, rng: &mut impl Rng) {
    let closed = is_closed(stroke);
    let n = stroke.nodes.len() - usize::from(closed);
    if n == 0 {
        return;
    }
    let noise: Vec<_> = (0..n).map(|_| gaussian_2d(rng, [0.0, 0.0], sigma)).collect();
    let smoothed = if sigma > 0.0 { smooth3(&noise, closed) } else { noise };
    let mean = Vector2::new(mean[0], mean[1]);
    for (node, d) in stroke.nodes.iter_mut().zip(&smoothed) {
        node.position += mean + d;
    }
    if closed {
        let first = stroke.nodes[0].position;
        stroke.nodes.last_mut().unwrap().position = first;
    }
}

/// Hides each stroke with probability min(1, k * o_s).
pub fn hide_occluded(sketch: &mut VectorSketch, k: f64, rng: &mut impl Rng) {
    for stroke in &mut sketch.strokes {
        let p = (k * stroke.occlusion).clamp(0.0, 1.0);
        // Always draw so the RNG stream does not depend on earlier outcomes.
        let u: f64 = rng.random();
        if !stroke.hidden && u < p {
            stroke.hidden = true;
        }
    }
}

/// Hides each visible stroke with probability `p`; then, with probability
/// p/2, hides every stroke of one randomly chosen part.
pub fn hide_random(sketch: &mut VectorSketch, p: f64, rng: &mut impl Rng) {
    let p = p.clamp(0.0, 1.0);
    for stroke in &mut sketch.strokes {
        let u: f64 = rng.random();
        if u < p {
            stroke.hidden = true;
        }
    }
    let parts = parts_in_order(sketch);
    let u: f64 = rng.random();
    if u < p / 2.0 && !parts.is_empty() {
        let part = parts[rng.random_range(0..parts.len())];
        for stroke in sketch.strokes.iter_mut().filter(|s| s.part == part) {
            stroke.hidden = true;
        }
    }
}

/// Applies translate, jitter, occlusion hiding and random hiding, in that
/// order. Deterministic in `(sketch, config, seed)`.
pub fn augment_sketch(sketch: &VectorSketch, config: &AugmentConfig, seed: u64) -> VectorSketch {
    let mut out = sketch.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma_t = config.effective_translate_sigma();
    for part in parts_in_order(&out) {
        let offset = gaussian_2d(&mut rng, config.translate_mean, sigma_t);
        translate_part(&mut out, part, offset);
    }
    let sigma_j = config.effective_jitter_sigma();
    for stroke in &mut out.strokes {
        jitter_stroke(stroke, config.jitter_mean, sigma_j, &mut rng);
    }
    hide_occluded(&mut out, config.effective_gain(), &mut rng);
    hide_random(&mut out, config.effective_p_hide(), &mut rng);
    out
}
