//! Relaxed pair evaluation and sparse similarity graph assembly.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::align::{edge_minmax_align, Translation};
use crate::geometry::{edge_displacements, match_polygons, Pattern, Point};
use crate::layout_io::Constraint;
use crate::raster::{cosine_similarity, pattern_features, DctFeature};

/// A pattern extracted at its anchor plus its bounding-box-centered form, used
/// for coarse comparisons that ignore where the content sits in the window.
#[derive(Clone, Debug)]
pub struct AnchoredPattern {
    pub pattern: Pattern,
    pub centered: Pattern,
    /// Content bounding-box center relative to the anchor.
    pub offset: Point,
    /// DCT feature of `centered` (cosine constraint only).
    pub feature: Option<DctFeature>,
}

impl AnchoredPattern {
    pub fn new(pattern: Pattern, constraint: &Constraint, grid: usize, dct_k: usize) -> Self {
        let offset = pattern.content_offset();
        let centered = pattern.centered();
        let feature = matches!(constraint, Constraint::Cosine { .. }).then(|| pattern_features(&centered, grid, dct_k));
        Self {
            pattern,
            centered,
            offset,
            feature,
        }
    }
}

/// Slack added to the strict thresholds during coarse evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RelaxedSlack {
    pub cosine: f64,
    pub edge: f64,
}

/// Coarse check of one candidate pair. On acceptance returns the translation
/// that moves `b`'s anchor onto `a`'s content alignment.
///
/// Both patterns are compared in their centered frames, so the returned
/// translation is the centroid offset plus, for edge movement, the min-max
/// correction between the centered forms.
pub fn evaluate_pair_relaxed(
    a: &AnchoredPattern,
    b: &AnchoredPattern,
    constraint: &Constraint,
    slack: RelaxedSlack,
) -> Option<Translation> {
    let base = Translation::new(b.offset.x - a.offset.x, b.offset.y - a.offset.y);
    match *constraint {
        Constraint::Cosine { threshold } => {
            let (fa, fb) = (a.feature.as_ref()?, b.feature.as_ref()?);
            (cosine_similarity(fa, fb) >= threshold - slack.cosine).then_some(base)
        }
        Constraint::EdgeMove { threshold } => {
            let corr = match_polygons(&a.centered, &b.centered, Point::ORIGIN)
                .ok()
                .filter(|c| c.is_bijective())?;
            let disp = edge_displacements(&a.centered, &b.centered, &corr).ok()?;
            let (t, residual) = edge_minmax_align(&disp);
            (residual as f64 <= threshold + slack.edge).then(|| base + t)
        }
    }
}

/// Evaluates every pair in parallel; results are index-aligned with `pairs`.
pub fn evaluate_pairs(
    views: &[AnchoredPattern],
    pairs: &[(usize, usize)],
    constraint: &Constraint,
    slack: RelaxedSlack,
) -> Vec<Option<Translation>> {
    pairs
        .par_iter()
        .map(|&(i, j)| evaluate_pair_relaxed(&views[i], &views[j], constraint, slack))
        .collect()
}

/// Undirected graph with sorted neighbor lists. `alignments[i][k]` is the
/// translation of neighbor `adjacency[i][k]` relative to `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimilarityGraph {
    adjacency: Vec<Vec<usize>>,
    alignments: Vec<Vec<Translation>>,
}

impl SimilarityGraph {
    pub fn empty(n: usize) -> Self {
        Self {
            adjacency: vec![Vec::new(); n],
            alignments: vec![Vec::new(); n],
        }
    }

    /// Builds a graph from undirected edges with zero alignment payloads.
    /// Self-loops and duplicates are dropped.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let pairs: Vec<(usize, usize)> = edges
            .iter()
            .filter(|(a, b)| a != b)
            .map(|&(a, b)| (a.min(b), a.max(b)))
            .collect();
        let results = vec![Some(Translation::ZERO); pairs.len()];
        assemble(n, &pairs, &results)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Translation of `j` relative to `i`, if the edge exists.
    pub fn alignment(&self, i: usize, j: usize) -> Option<Translation> {
        let k = self.adjacency[i].binary_search(&j).ok()?;
        Some(self.alignments[i][k])
    }

    /// Writes `i j dx dy` for every edge with `i < j`.
    pub fn dump(&self, out: &mut impl Write) -> io::Result<()> {
        for (i, adj) in self.adjacency.iter().enumerate() {
            for (k, &j) in adj.iter().enumerate() {
                if i < j {
                    let t = self.alignments[i][k];
                    writeln!(out, "{i} {j} {} {}", t.dx, t.dy)?;
                }
            }
        }
        Ok(())
    }
}

/// Builds the symmetric graph from accepted pairs. The result depends only on
/// the set of accepted pairs, not their order.
pub fn assemble(n: usize, pairs: &[(usize, usize)], results: &[Option<Translation>]) -> SimilarityGraph {
    assert_eq!(pairs.len(), results.len(), "results must align with pairs");
    let mut entries: Vec<Vec<(usize, Translation)>> = vec![Vec::new(); n];
    for (&(i, j), r) in pairs.iter().zip(results) {
        if let Some(t) = *r {
            if i == j {
                continue;
            }
            entries[i].push((j, t));
            entries[j].push((i, -t));
        }
    }
    let mut adjacency = Vec::with_capacity(n);
    let mut alignments = Vec::with_capacity(n);
    for mut e in entries {
        e.sort_unstable_by_key(|(j, t)| (*j, t.dx, t.dy));
        e.dedup_by_key(|(j, _)| *j);
        adjacency.push(e.iter().map(|(j, _)| *j).collect());
        alignments.push(e.iter().map(|(_, t)| *t).collect());
    }
    SimilarityGraph { adjacency, alignments }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Polygon, Rect};

    fn view(rects: &[Rect], constraint: &Constraint) -> AnchoredPattern {
        let p = Pattern::new(Point::ORIGIN, 256, rects.iter().map(Polygon::from_rect).collect());
        AnchoredPattern::new(p, constraint, 32, 16)
    }

    #[test]
    fn identical_patterns_accept_with_zero_shift() {
        let rects = [Rect::new(-40, -40, 20, 0), Rect::new(40, 10, 80, 90)];
        for c in [
            Constraint::Cosine { threshold: 0.99 },
            Constraint::EdgeMove { threshold: 0.0 },
        ] {
            let a = view(&rects, &c);
            assert_eq!(
                evaluate_pair_relaxed(&a, &a, &c, RelaxedSlack::default()),
                Some(Translation::ZERO)
            );
        }
    }

    #[test]
    fn shifted_copy_recovers_jitter_delta() {
        let c = Constraint::EdgeMove { threshold: 2.0 };
        let rects = [Rect::new(-40, -40, 20, 0), Rect::new(40, 10, 80, 90)];
        let a = view(&rects, &c);
        let shifted: Vec<Rect> = rects.iter().map(|r| r.translate(9, -4)).collect();
        let b = view(&shifted, &c);
        assert_eq!(
            evaluate_pair_relaxed(&a, &b, &c, RelaxedSlack::default()),
            Some(Translation::new(9, -4))
        );
    }

    #[test]
    fn different_topology_rejected() {
        let c = Constraint::EdgeMove { threshold: 50.0 };
        let a = view(&[Rect::new(-40, -40, 20, 0)], &c);
        let b = view(&[Rect::new(-40, -40, 20, 0), Rect::new(40, 10, 80, 90)], &c);
        assert_eq!(evaluate_pair_relaxed(&a, &b, &c, RelaxedSlack::default()), None);
    }

    #[test]
    fn assemble_cases() {
        let g = assemble(3, &[], &[]);
        assert_eq!(g.edge_count(), 0);
        let pairs: Vec<(usize, usize)> = (0..4).flat_map(|i| ((i + 1)..4).map(move |j| (i, j))).collect();
        let g = SimilarityGraph::from_edges(4, &pairs);
        assert!((0..4).all(|i| g.degree(i) == 3));
    }

    #[test]
    fn assembly_symmetric_and_order_independent() {
        let pairs = vec![(0, 3), (1, 2), (2, 3), (0, 1)];
        let res = vec![
            Some(Translation::new(1, 2)),
            None,
            Some(Translation::new(-3, 0)),
            Some(Translation::new(5, 5)),
        ];
        let g = assemble(4, &pairs, &res);
        let mut idx: Vec<usize> = (0..4).collect();
        idx.reverse();
        let rp: Vec<_> = idx.iter().map(|&k| pairs[k]).collect();
        let rr: Vec<_> = idx.iter().map(|&k| res[k]).collect();
        assert_eq!(g, assemble(4, &rp, &rr));
        for i in 0..4 {
            for &j in g.neighbors(i) {
                assert_ne!(i, j);
                assert_eq!(g.alignment(j, i), g.alignment(i, j).map(|t| -t));
            }
        }
        let mut out = Vec::new();
        g.dump(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0 1 5 5\n0 3 1 2\n2 3 -3 0\n");
    }
}
