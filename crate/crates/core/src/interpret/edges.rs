use super::fit::{polyline_length, resample, P2};

/// Largest tangent-angle difference for two edges to pair, degrees.
pub const PAIR_MAX_ANGLE_DEG: f64 = 25.0;
/// Accepted mean lateral gap between paired edges, pixels.
pub const PAIR_GAP_RANGE: (f64, f64) = (6.0, 60.0);
/// Paired edges must overlap along their direction by this fraction of the
/// shorter edge.
const PAIR_MIN_OVERLAP: f64 = 0.5;
/// The gap may not exceed this multiple of the mean edge length, so short
/// parallel caps across a limb do not pair.
const PAIR_MAX_GAP_RATIO: f64 = 0.9;
/// Unpaired edges shorter than this are not treated as single-line limbs.
pub const MIN_SINGLE_EDGE_PX: f64 = 20.0;
const MIDLINE_SAMPLES: usize = 16;

/// A limb candidate: the midline between two paired edges, or a single
/// edge standing in for the whole limb.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbSegment {
    pub midline: Vec<P2>,
    /// Mean lateral gap for pairs, `None` for single edges.
    pub width: Option<f64>,
    /// Indices into the edge list given to [`pair_limb_edges`].
    pub edges: (usize, Option<usize>),
}

impl LimbSegment {
    pub fn endpoints(&self) -> (P2, P2) {
        (self.midline[0], *self.midline.last().unwrap())
    }

    pub fn length(&self) -> f64 {
        let (a, b) = self.endpoints();
        (b - a).norm()
    }
}

fn direction(points: &[P2]) -> Option<P2> {
    let d = points.last()? - points.first()?;
    let n = d.norm();
    (n > 0.0).then(|| d / n)
}

fn line_distance(p: &P2, origin: &P2, dir: &P2) -> f64 {
    let q = p - origin;
    (q.x * dir.y - q.y * dir.x).abs()
}

/// Geometry of a candidate pair: (angle difference in degrees, mean gap),
/// or `None` when the pair fails the overlap or aspect checks.
fn pair_geometry(a: &[P2], b: &[P2]) -> Option<(f64, f64)> {
    let (da, db) = (direction(a)?, direction(b)?);
    let cos = da.dot(&db).abs().min(1.0);
    let angle = cos.acos().to_degrees();
    let gap_ab = a.iter().map(|p| line_distance(p, &b[0], &db)).sum::<f64>() / a.len() as f64;
    let gap_ba = b.iter().map(|p| line_distance(p, &a[0], &da)).sum::<f64>() / b.len() as f64;
    let gap = (gap_ab + gap_ba) / 2.0;
    let axis = if da.dot(&db) >= 0.0 { (da + db).normalize() } else { (da - db).normalize() };
    let span = |pts: &[P2]| {
        let (s, e) = (pts[0].dot(&axis), pts.last().unwrap().dot(&axis));
        (s.min(e), s.max(e))
    };
    let ((a0, a1), (b0, b1)) = (span(a), span(b));
    let overlap = a1.min(b1) - a0.max(b0);
    let shorter = (a1 - a0).min(b1 - b0);
    if overlap < PAIR_MIN_OVERLAP * shorter {
        return None;
    }
    let mean_len = (polyline_length(a) + polyline_length(b)) / 2.0;
    if gap > PAIR_MAX_GAP_RATIO * mean_len {
        return None;
    }
    Some((angle, gap))
}

/// Pairs roughly parallel edges into limb segments. Candidate pairs are
/// taken greedily by ascending gap; leftover edges at least
/// [`MIN_SINGLE_EDGE_PX`] long become single-edge segments.
pub fn pair_limb_edges(edges: &[Vec<P2>]) -> Vec<LimbSegment> {
    let mut candidates = Vec::new();
    for i in 0..edges.len() {
        for j in i + 1..edges.len() {
            if edges[i].len() < 2 || edges[j].len() < 2 {
                continue;
            }
            if let Some((angle, gap)) = pair_geometry(&edges[i], &edges[j]) {
                if angle < PAIR_MAX_ANGLE_DEG && (PAIR_GAP_RANGE.0..=PAIR_GAP_RANGE.1).contains(&gap) {
                    candidates.push((gap, angle, i, j));
                }
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let mut used = vec![false; edges.len()];
    let mut out = Vec::new();
    for (gap, _, i, j) in candidates {
        if used[i] || used[j] {
            continue;
        }
        used[i] = true;
        used[j] = true;
        out.push(LimbSegment { midline: midline(&edges[i], &edges[j]), width: Some(gap), edges: (i, Some(j)) });
    }
    for (i, e) in edges.iter().enumerate() {
        if !used[i] && e.len() >= 2 && polyline_length(e) >= MIN_SINGLE_EDGE_PX {
            out.push(LimbSegment { midline: e.clone(), width: None, edges: (i, None) });
        }
    }
    out
}

fn sample_n(points: &[P2], n: usize) -> Vec<P2> {
    let len = polyline_length(points);
    let mut r = resample(points, len / (n - 1) as f64);
    r.resize(n, *points.last().unwrap());
    r
}

fn midline(a: &[P2], b: &[P2]) -> Vec<P2> {
    let sa = sample_n(a, MIDLINE_SAMPLES);
    let mut sb = sample_n(b, MIDLINE_SAMPLES);
    let same = (sa[0] - sb[0]).norm() + (sa[MIDLINE_SAMPLES - 1] - sb[MIDLINE_SAMPLES - 1]).norm();
    let flipped = (sa[0] - sb[MIDLINE_SAMPLES - 1]).norm() + (sa[MIDLINE_SAMPLES - 1] - sb[0]).norm();
    if flipped < same {
        sb.reverse();
    }
    sa.iter().zip(&sb).map(|(p, q)| (p + q) / 2.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn line(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<P2> {
        resample(&[Vector2::new(x0, y0), Vector2::new(x1, y1)], 2.0)
    }

    #[test]
    fn parallel_pair_makes_one_segment() {
        let segs = pair_limb_edges(&[line(0.0, 0.0, 0.0, 100.0), line(20.0, 100.0, 20.0, 0.0)]);
        assert_eq!(segs.len(), 1);
        let s = &segs[0];
        assert_eq!(s.edges, (0, Some(1)));
        assert!((s.width.unwrap() - 20.0).abs() < 1e-9);
        let (a, b) = s.endpoints();
        assert!((a - Vector2::new(10.0, 0.0)).norm() < 1e-9 && (b - Vector2::new(10.0, 100.0)).norm() < 1e-9);
    }

    #[test]
    fn gates_reject_bad_pairs() {
        // Too close, too far, too skewed.
        for other in [line(3.0, 0.0, 3.0, 100.0), line(70.0, 0.0, 70.0, 100.0), line(20.0, 0.0, 70.0, 100.0)] {
            let segs = pair_limb_edges(&[line(0.0, 0.0, 0.0, 100.0), other]);
            assert!(segs.iter().all(|s| s.width.is_none()), "{segs:?}");
        }
        // Two short caps across a limb do not pair.
        let caps = pair_limb_edges(&[line(0.0, 0.0, 20.0, 0.0), line(0.0, 50.0, 20.0, 50.0)]);
        assert!(caps.iter().all(|s| s.width.is_none()));
    }

    #[test]
    fn three_parallel_lines_pair_best_gap() {
        let edges = vec![line(0.0, 0.0, 0.0, 120.0), line(50.0, 0.0, 50.0, 120.0), line(20.0, 0.0, 20.0, 120.0)];
        let segs = pair_limb_edges(&edges);
        // Oracle: enumerate the three possible pairs and take the smallest gap.
        let xs: [f64; 3] = [0.0, 50.0, 20.0];
        let mut best = (f64::MAX, 0, 0);
        for i in 0..3 {
            for j in i + 1..3 {
                let g = (xs[i] - xs[j]).abs();
                if g < best.0 {
                    best = (g, i, j);
                }
            }
        }
        let paired: Vec<_> = segs.iter().filter(|s| s.width.is_some()).collect();
        assert_eq!(paired.len(), 1);
        assert_eq!(paired[0].edges, (best.1, Some(best.2)));
        let singles: Vec<_> = segs.iter().filter(|s| s.width.is_none()).map(|s| s.edges.0).collect();
        assert_eq!(singles, vec![1]);
    }
}
