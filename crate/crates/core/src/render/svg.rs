//! Vector sketch files: one `<polyline>` per stroke with the part label,
//! line type, occlusion rating and hidden flag as `data-*` attributes.
//!
//! Output is byte-stable: coordinates use three decimals and attributes
//! are always written in the same order.

use std::fmt::Write;

use nalgebra::{Vector2, Vector3};

use super::{LineType, Stroke, StrokeNode, VectorSketch};
use crate::body_model::PartLabel;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SvgError {
    #[error("missing <svg> root element")]
    MissingRoot,
    #[error("bad attribute `{name}`: {reason}")]
    Attribute { name: String, reason: String },
    #[error("polyline {index} has malformed points")]
    Points { index: usize },
}

/// Strokes read back from a sketch file; labels are optional so that
/// unlabeled drawings parse too.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedStroke {
    pub points: Vec<Vector2<f64>>,
    pub part: Option<PartLabel>,
    pub line_type: Option<LineType>,
    pub occlusion: Option<f64>,
    pub hidden: bool,
}

pub fn write_svg(sketch: &VectorSketch) -> String {
    let mut out = String::new();
    let (w, h) = (sketch.width, sketch.height);
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    )
    .unwrap();
    for stroke in &sketch.strokes {
        write!(
            out,
            "  <polyline data-part=\"{}\" data-linetype=\"{}\" data-occlusion=\"{:.3}\" data-hidden=\"{}\"",
            stroke.part,
            stroke.line_type.as_str(),
            stroke.occlusion,
            stroke.hidden
        )
        .unwrap();
        if stroke.hidden {
            out.push_str(" display=\"none\"");
        }
        out.push_str(" fill=\"none\" stroke=\"black\" stroke-width=\"2\" points=\"");
        for (i, n) in stroke.nodes.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{:.3},{:.3}", n.position.x, n.position.y).unwrap();
        }
        out.push_str("\"/>\n");
    }
    out.push_str("</svg>\n");
    out
}

fn attributes(tag: &str) -> Vec<(&str, &str)> {
    let mut out = Vec::new();
    let mut rest = tag;
    while let Some(eq) = rest.find("=\"") {
        let name = rest[..eq].rsplit(|c: char| c.is_whitespace()).next().unwrap_or("").trim();
        let after = &rest[eq + 2..];
        let Some(end) = after.find('"') else { break };
        out.push((name, &after[..end]));
        rest = &after[end + 1..];
    }
    out
}

fn parse_points(text: &str, index: usize) -> Result<Vec<Vector2<f64>>, SvgError> {
    let nums: Result<Vec<f64>, _> =
        text.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).map(str::parse).collect();
    let nums = nums.map_err(|_| SvgError::Points { index })?;
    if nums.len() % 2 != 0 || nums.iter().any(|v| !v.is_finite()) {
        return Err(SvgError::Points { index });
    }
    Ok(nums.chunks(2).map(|c| Vector2::new(c[0], c[1])).collect())
}

/// Reads the root size and every polyline of a sketch file.
pub fn parse_svg(text: &str) -> Result<(u32, u32, Vec<ParsedStroke>), SvgError> {
    let root_start = text.find("<svg").ok_or(SvgError::MissingRoot)?;
    let root_end = text[root_start..].find('>').ok_or(SvgError::MissingRoot)? + root_start;
    let mut width = 512;
    let mut height = 512;
    for (name, value) in attributes(&text[root_start..root_end]) {
        let parse = |v: &str| {
            v.trim_end_matches("px").parse::<f64>().map(|f| f.round() as u32).map_err(|e| SvgError::Attribute {
                name: name.to_string(),
                reason: e.to_string(),
            })
        };
        match name {
            "width" => width = parse(value)?,
            "height" => height = parse(value)?,
            _ => {}
        }
    }

    let mut strokes = Vec::new();
    let mut rest = &text[root_end..];
    while let Some(start) = rest.find("<polyline") {
        let Some(end) = rest[start..].find("/>").or_else(|| rest[start..].find('>')) else { break };
        let tag = &rest[start..start + end];
        let index = strokes.len();
        let mut stroke = ParsedStroke { points: vec![], part: None, line_type: None, occlusion: None, hidden: false };
        for (name, value) in attributes(tag) {
            let bad = |reason: String| SvgError::Attribute { name: name.to_string(), reason };
            match name {
                "points" => stroke.points = parse_points(value, index)?,
                "data-part" => stroke.part = Some(value.parse().map_err(|e: crate::body_model::UnknownPart| bad(e.to_string()))?),
                "data-linetype" => {
                    stroke.line_type = Some(LineType::parse(value).ok_or_else(|| bad(value.to_string()))?)
                }
                "data-occlusion" => stroke.occlusion = Some(value.parse().map_err(|_| bad(value.to_string()))?),
                "data-hidden" => stroke.hidden = value == "true",
                _ => {}
            }
        }
        strokes.push(stroke);
        rest = &rest[start + end..];
    }
    Ok((width, height, strokes))
}

/// Rebuilds a labeled sketch from a file written by [`write_svg`]. Source
/// points are not stored in the file and come back as zeros.
pub fn read_sketch(text: &str) -> Result<VectorSketch, SvgError> {
    let (width, height, parsed) = parse_svg(text)?;
    let strokes = parsed
        .into_iter()
        .map(|p| Stroke {
            nodes: p
                .points
                .iter()
                .map(|&position| StrokeNode { position, source: Vector3::zeros(), occluded: false })
                .collect(),
            line_type: p.line_type.unwrap_or(LineType::Contour),
            part: p.part.unwrap_or(PartLabel::FaceMark),
            occlusion: p.occlusion.unwrap_or(0.0),
            hidden: p.hidden,
            primitive: None,
        })
        .collect();
    Ok(VectorSketch { strokes, width, height, provenance: None })
}
