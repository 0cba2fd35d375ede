//! Multi-stage candidate pair pre-screening.
//!
//! Stage A groups patterns by a cheap translation-invariant signature so that
//! cross-bucket pairs are never generated. Stage B applies a per-pair filter
//! inside each bucket: an 8×8 thumbnail cosine for the cosine constraint, a
//! bounding-box band for the edge-movement constraint. Thumbnails are taken in
//! the bounding-box-centered frame of each pattern so marker jitter does not
//! affect them.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{Coord, Pattern};
use crate::layout_io::Constraint;
use crate::raster::{cosine, rasterize};

/// Vertex-count histogram bins: 4, 6, ..., 16, and 18+.
pub const HISTOGRAM_BINS: usize = 8;
pub const THUMBNAIL_SIDE: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TopoSignature {
    pub polygon_count: usize,
    pub vertex_histogram: [u32; HISTOGRAM_BINS],
    pub quantized_area: i64,
    pub quantized_bbox: (i64, i64),
}

/// Signature of a pattern; area is floored to `quantum²` units and the content
/// bounding box to `quantum` units.
pub fn signature(p: &Pattern, quantum: Coord) -> TopoSignature {
    assert!(quantum > 0, "quantum must be positive");
    let mut vertex_histogram = [0u32; HISTOGRAM_BINS];
    for s in &p.shapes {
        let bin = ((s.len().saturating_sub(4)) / 2).min(HISTOGRAM_BINS - 1);
        vertex_histogram[bin] += 1;
    }
    let q = quantum as i128;
    let quantized_bbox = p
        .content_bbox()
        .map_or((0, 0), |b| (b.width() / quantum, b.height() / quantum));
    TopoSignature {
        polygon_count: p.shapes.len(),
        vertex_histogram,
        quantized_area: (p.area() / (q * q)) as i64,
        quantized_bbox,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrescreenConfig {
    /// Area and bounding-box quantum in nm.
    pub quantum: Coord,
    /// Thumbnail threshold is `max(0, T_cos - cosine_slack)`.
    pub cosine_slack: f64,
    /// Edge-movement band slack in nm added to the threshold.
    pub edge_slack: f64,
}

impl Default for PrescreenConfig {
    fn default() -> Self {
        Self {
            quantum: 8,
            cosine_slack: 0.05,
            edge_slack: 0.0,
        }
    }
}

/// Per-pattern data used by the screening stages.
#[derive(Clone, Debug, PartialEq)]
pub struct ScreenFeatures {
    pub signature: TopoSignature,
    pub thumbnail: Vec<f64>,
}

impl ScreenFeatures {
    pub fn new(p: &Pattern, quantum: Coord) -> Self {
        Self {
            signature: signature(p, quantum),
            thumbnail: rasterize(&p.centered(), THUMBNAIL_SIDE).pixels().to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub total_pairs: u64,
    pub after_stage_a: u64,
    pub after_stage_b: u64,
}

impl StageCounts {
    /// Fraction of all pairs eliminated.
    pub fn filter_rate(&self) -> f64 {
        if self.total_pairs == 0 {
            0.0
        } else {
            1.0 - self.after_stage_b as f64 / self.total_pairs as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CandidatePairSet {
    pub pairs: Vec<(usize, usize)>,
    pub stats: StageCounts,
}

/// Every `i < j` pair, for runs with pre-screening disabled.
pub fn all_pairs(n: usize) -> CandidatePairSet {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let c = pairs.len() as u64;
    CandidatePairSet {
        pairs,
        stats: StageCounts {
            total_pairs: c,
            after_stage_a: c,
            after_stage_b: c,
        },
    }
}

/// Computes features and screens all pairs of `patterns`.
pub fn build_candidates(patterns: &[Pattern], constraint: &Constraint, cfg: &PrescreenConfig) -> CandidatePairSet {
    let features: Vec<ScreenFeatures> = patterns
        .par_iter()
        .map(|p| ScreenFeatures::new(p, cfg.quantum))
        .collect();
    build_candidates_from(&features, constraint, cfg)
}

/// Bucket key of stage A.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum BucketKey {
    Count(usize),
    Topology(usize, [u32; HISTOGRAM_BINS]),
}

fn bucket_key(sig: &TopoSignature, constraint: &Constraint) -> BucketKey {
    match constraint {
        Constraint::Cosine { .. } => BucketKey::Count(sig.polygon_count),
        Constraint::EdgeMove { .. } => BucketKey::Topology(sig.polygon_count, sig.vertex_histogram),
    }
}

/// Screens all pairs given precomputed features. Output pairs are sorted.
pub fn build_candidates_from(
    features: &[ScreenFeatures],
    constraint: &Constraint,
    cfg: &PrescreenConfig,
) -> CandidatePairSet {
    let n = features.len() as u64;
    let mut buckets: BTreeMap<BucketKey, Vec<usize>> = BTreeMap::new();
    for (i, f) in features.iter().enumerate() {
        buckets.entry(bucket_key(&f.signature, constraint)).or_default().push(i);
    }
    let buckets: Vec<Vec<usize>> = buckets.into_values().collect();

    let per_bucket: Vec<(u64, Vec<(usize, usize)>)> = buckets
        .par_iter()
        .map(|members| screen_bucket(features, members, constraint, cfg))
        .collect();

    let mut pairs = Vec::new();
    let mut after_a = 0;
    for (a, p) in per_bucket {
        after_a += a;
        pairs.extend(p);
    }
    pairs.par_sort_unstable();
    let stats = StageCounts {
        total_pairs: n * n.saturating_sub(1) / 2,
        after_stage_a: after_a,
        after_stage_b: pairs.len() as u64,
    };
    CandidatePairSet { pairs, stats }
}

/// Both stages applied to a single pair, matching [`build_candidates_from`].
pub fn pair_passes(a: &ScreenFeatures, b: &ScreenFeatures, constraint: &Constraint, cfg: &PrescreenConfig) -> bool {
    if bucket_key(&a.signature, constraint) != bucket_key(&b.signature, constraint) {
        return false;
    }
    match *constraint {
        Constraint::Cosine { threshold } => {
            let relaxed = (threshold - cfg.cosine_slack).max(0.0);
            let (lo, hi) = {
                let (x, y) = (a.signature.quantized_area, b.signature.quantized_area);
                (x.min(y), x.max(y))
            };
            (lo as f64) >= relaxed * relaxed * hi as f64 - 1.0 && cosine(&a.thumbnail, &b.thumbnail) >= relaxed
        }
        Constraint::EdgeMove { threshold } => {
            let tol = (2.0 * (threshold + cfg.edge_slack) / cfg.quantum as f64).floor() as i64 + 1;
            let (wa, ha) = a.signature.quantized_bbox;
            let (wb, hb) = b.signature.quantized_bbox;
            (wa - wb).abs() <= tol && (ha - hb).abs() <= tol
        }
    }
}

/// Returns (pairs passing stage A, pairs passing both stages) for one bucket.
fn screen_bucket(
    features: &[ScreenFeatures],
    members: &[usize],
    constraint: &Constraint,
    cfg: &PrescreenConfig,
) -> (u64, Vec<(usize, usize)>) {
    let mut order = members.to_vec();
    let mut out = Vec::new();
    let mut stage_a = 0u64;
    match *constraint {
        Constraint::Cosine { threshold } => {
            let relaxed = (threshold - cfg.cosine_slack).max(0.0);
            // Two coverage maps reaching cosine `t` rarely differ in area by
            // more than a factor `t^2`; sort by area and sweep that band.
            let band = relaxed * relaxed;
            order.sort_by_key(|&i| (features[i].signature.quantized_area, i));
            for (pos, &i) in order.iter().enumerate() {
                let ai = features[i].signature.quantized_area;
                for &j in &order[pos + 1..] {
                    let aj = features[j].signature.quantized_area;
                    // aj >= ai here
                    if (ai as f64) < band * aj as f64 - 1.0 {
                        break;
                    }
                    stage_a += 1;
                    if cosine(&features[i].thumbnail, &features[j].thumbnail) >= relaxed {
                        out.push((i.min(j), i.max(j)));
                    }
                }
            }
        }
        Constraint::EdgeMove { threshold } => {
            // Each edge moves at most `t`, so box sides change by at most 2t;
            // one extra quantum absorbs flooring.
            let t = threshold + cfg.edge_slack;
            let tol = (2.0 * t / cfg.quantum as f64).floor() as i64 + 1;
            order.sort_by_key(|&i| (features[i].signature.quantized_bbox, i));
            for (pos, &i) in order.iter().enumerate() {
                let (wi, hi) = features[i].signature.quantized_bbox;
                for &j in &order[pos + 1..] {
                    let (wj, hj) = features[j].signature.quantized_bbox;
                    if wj - wi > tol {
                        break;
                    }
                    stage_a += 1;
                    if (hj - hi).abs() <= tol {
                        out.push((i.min(j), i.max(j)));
                    }
                }
            }
        }
    }
    (stage_a, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, Polygon, Rect};

    fn pat(rects: &[Rect]) -> Pattern {
        Pattern::new(Point::ORIGIN, 256, rects.iter().map(Polygon::from_rect).collect())
    }

    #[test]
    fn empty_signature() {
        let s = signature(&pat(&[]), 8);
        assert_eq!(
            s,
            TopoSignature {
                polygon_count: 0,
                vertex_histogram: [0; HISTOGRAM_BINS],
                quantized_area: 0,
                quantized_bbox: (0, 0)
            }
        );
    }

    #[test]
    fn translated_copy_same_signature() {
        let a = pat(&[Rect::new(-50, -50, 30, 10), Rect::new(60, 0, 90, 100)]);
        let b = a.shifted(17, -33);
        assert_eq!(signature(&a, 8), signature(&b, 8));
        assert_eq!(ScreenFeatures::new(&a, 8), ScreenFeatures::new(&b, 8));
    }

    #[test]
    fn extra_rectangle_changes_count() {
        let a = pat(&[Rect::new(-50, -50, 30, 10)]);
        let b = pat(&[Rect::new(-50, -50, 30, 10), Rect::new(60, 0, 90, 100)]);
        assert_ne!(signature(&a, 8).polygon_count, signature(&b, 8).polygon_count);
        let cs = build_candidates(
            &[a, b],
            &Constraint::Cosine { threshold: 0.5 },
            &PrescreenConfig::default(),
        );
        assert!(cs.pairs.is_empty());
    }

    #[test]
    fn identical_patterns_all_survive() {
        let p = pat(&[Rect::new(-50, -50, 30, 10), Rect::new(60, 0, 90, 100)]);
        let ps = vec![p; 6];
        for c in [
            Constraint::Cosine { threshold: 0.99 },
            Constraint::EdgeMove { threshold: 0.0 },
        ] {
            let cs = build_candidates(&ps, &c, &PrescreenConfig::default());
            assert_eq!(cs.pairs.len(), 15);
            assert_eq!(cs.stats.total_pairs, 15);
        }
    }

    #[test]
    fn edge_move_separates_topologies() {
        let rects = pat(&[Rect::new(-50, -50, 30, 10), Rect::new(60, 0, 90, 100)]);
        let l = Polygon::new(
            [(0, 0), (40, 0), (40, 20), (20, 20), (20, 40), (0, 40)]
                .iter()
                .map(|&(x, y)| Point::new(x, y))
                .collect(),
        )
        .unwrap();
        let other = Pattern::new(
            Point::ORIGIN,
            256,
            vec![l, Polygon::from_rect(&Rect::new(60, 0, 90, 100))],
        );
        let ps = vec![rects.clone(), rects, other.clone(), other];
        let cs = build_candidates(
            &ps,
            &Constraint::EdgeMove { threshold: 10.0 },
            &PrescreenConfig::default(),
        );
        assert_eq!(cs.pairs, vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn output_is_deterministic() {
        let ps: Vec<Pattern> = (0..12)
            .map(|i| pat(&[Rect::new(-40, -40, 10 + (i % 3) * 4, 20)]))
            .collect();
        let c = Constraint::Cosine { threshold: 0.9 };
        let a = build_candidates(&ps, &c, &PrescreenConfig::default());
        let b = build_candidates(&ps, &c, &PrescreenConfig::default());
        assert_eq!(a, b);
        assert!(a.pairs.windows(2).all(|w| w[0] < w[1]));
    }
}
