//! Surprisal-weighted greedy set cover over the similarity graph.
//!
//! Each node `j` can cover itself and its neighbors. Node frequency is
//! `f = 1 + degree`, surprisal `S = 1 / f`, and the gain of selecting `j` is
//! the surprisal mass it newly covers:
//!
//! `gain(j) = [j ∈ U]·S_j + Σ_{k ∈ adj(j) ∩ U} S_k`
//!
//! The gain only shrinks as `U` shrinks, which the lazy solver exploits: a
//! stale heap entry is an upper bound and only needs recomputing when it
//! reaches the top.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::SimilarityGraph;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurprisalScore {
    pub node: usize,
    pub frequency: usize,
    pub surprisal: f64,
    pub tentative_score: f64,
    pub epoch: u64,
}

fn surprisals(g: &SimilarityGraph) -> Vec<f64> {
    (0..g.node_count()).map(|i| 1.0 / (1 + g.degree(i)) as f64).collect()
}

/// Scores with every node uncovered: `S_j + Σ_{k ∈ adj(j)} S_k`.
pub fn initial_scores(g: &SimilarityGraph) -> Vec<SurprisalScore> {
    let s = surprisals(g);
    (0..g.node_count())
        .into_par_iter()
        .map(|j| SurprisalScore {
            node: j,
            frequency: 1 + g.degree(j),
            surprisal: s[j],
            tentative_score: s[j] + g.neighbors(j).iter().map(|&k| s[k]).sum::<f64>(),
            epoch: 0,
        })
        .collect()
}

/// Marginal gain of `j` against the current uncovered set.
fn gain(g: &SimilarityGraph, s: &[f64], uncovered: &[bool], j: usize) -> f64 {
    let own = if uncovered[j] { s[j] } else { 0.0 };
    own + g
        .neighbors(j)
        .iter()
        .filter(|&&k| uncovered[k])
        .map(|&k| s[k])
        .sum::<f64>()
}

/// One chosen representative and the nodes it newly covered (itself first
/// when it was still uncovered).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub node: usize,
    pub covered: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    pub pops: u64,
    /// Lazy: stale entries recomputed. Eager: every score evaluation.
    pub recomputations: u64,
    pub reinsertions: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverSolution {
    pub selections: Vec<Selection>,
    pub stats: SolverStats,
}

impl CoverSolution {
    /// Index of the selection that covered each node.
    pub fn assignment(&self, n: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; n];
        for (s, sel) in self.selections.iter().enumerate() {
            for &v in &sel.covered {
                out[v] = s;
            }
        }
        out
    }
}

/// Heap entry ordered by score, then by smaller node id.
#[derive(Clone, Copy, Debug)]
struct Entry {
    score: f64,
    node: usize,
    epoch: u64,
}

impl Entry {
    fn beats(&self, score: f64, node: usize) -> bool {
        self.score > score || (self.score == score && self.node < node)
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.node.cmp(&self.node))
    }
}

fn cover(g: &SimilarityGraph, uncovered: &mut [bool], remaining: &mut usize, j: usize) -> Vec<usize> {
    let mut covered = Vec::new();
    if uncovered[j] {
        covered.push(j);
    }
    covered.extend(g.neighbors(j).iter().copied().filter(|&k| uncovered[k]));
    for &v in &covered {
        uncovered[v] = false;
    }
    *remaining -= covered.len();
    covered
}

/// Lazy greedy solver.
pub fn solve(g: &SimilarityGraph) -> CoverSolution {
    let n = g.node_count();
    let s = surprisals(g);
    let mut uncovered = vec![true; n];
    let mut remaining = n;
    let mut epoch = vec![0u64; n];
    let mut stats = SolverStats::default();
    let mut heap: BinaryHeap<Entry> = initial_scores(g)
        .into_iter()
        .map(|sc| Entry {
            score: sc.tentative_score,
            node: sc.node,
            epoch: 0,
        })
        .collect();
    let mut selections = Vec::new();

    while remaining > 0 {
        let top = heap.pop().expect("uncovered nodes always have positive gain");
        stats.pops += 1;
        let j = top.node;
        let chosen = if top.epoch == epoch[j] {
            true
        } else {
            stats.recomputations += 1;
            let fresh = gain(g, &s, &uncovered, j);
            debug_assert!(fresh <= top.score, "gain increased for node {j}");
            if fresh <= 0.0 {
                continue;
            }
            let entry = Entry {
                score: fresh,
                node: j,
                epoch: epoch[j],
            };
            if heap.peek().is_none_or(|next| entry.beats(next.score, next.node)) {
                true
            } else {
                stats.reinsertions += 1;
                heap.push(entry);
                false
            }
        };
        if !chosen {
            continue;
        }
        let covered = cover(g, &mut uncovered, &mut remaining, j);
        for &v in &covered {
            epoch[v] += 1;
            for &w in g.neighbors(v) {
                epoch[w] += 1;
            }
        }
        selections.push(Selection { node: j, covered });
    }
    CoverSolution { selections, stats }
}

/// Reference greedy that recomputes every score after each selection.
pub fn eager_solve_oracle(g: &SimilarityGraph) -> CoverSolution {
    let n = g.node_count();
    let s = surprisals(g);
    let mut uncovered = vec![true; n];
    let mut remaining = n;
    let mut stats = SolverStats::default();
    let mut selections = Vec::new();
    while remaining > 0 {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            stats.recomputations += 1;
            let v = gain(g, &s, &uncovered, j);
            if v > 0.0 && best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, j));
            }
        }
        let (_, j) = best.expect("uncovered nodes always have positive gain");
        stats.pops += 1;
        let covered = cover(g, &mut uncovered, &mut remaining, j);
        selections.push(Selection { node: j, covered });
    }
    CoverSolution { selections, stats }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    fn clique(offset: usize, k: usize) -> Vec<(usize, usize)> {
        (0..k)
            .flat_map(|i| ((i + 1)..k).map(move |j| (offset + i, offset + j)))
            .collect()
    }

    /// Exact rational recomputation of the initial scores.
    fn rational_scores(g: &SimilarityGraph) -> Vec<Ratio<i64>> {
        let s: Vec<Ratio<i64>> = (0..g.node_count())
            .map(|i| Ratio::new(1, 1 + g.degree(i) as i64))
            .collect();
        (0..g.node_count())
            .map(|j| g.neighbors(j).iter().fold(s[j], |acc, &k| acc + s[k]))
            .collect()
    }

    #[test]
    fn isolated_node_scores_one() {
        let g = SimilarityGraph::empty(1);
        let sc = initial_scores(&g);
        assert_eq!(sc[0].frequency, 1);
        assert_eq!(sc[0].surprisal, 1.0);
        assert_eq!(sc[0].tentative_score, 1.0);
    }

    #[test]
    fn score_with_neighbor_degrees_one_and_two() {
        // node 0 adjacent to 1 (degree 1) and 2 (degree 2, also adjacent to 3)
        let g = SimilarityGraph::from_edges(4, &[(0, 1), (0, 2), (2, 3)]);
        let sc = initial_scores(&g);
        let expected = 1.0 / 3.0 + 1.0 / 2.0 + 1.0 / 3.0;
        assert!((sc[0].tentative_score - expected).abs() < 1e-15);
        let exact = rational_scores(&g);
        for (a, b) in sc.iter().zip(&exact) {
            assert!((a.tentative_score - *b.numer() as f64 / *b.denom() as f64).abs() < 1e-12);
        }
        assert_eq!(exact[0], Ratio::new(7, 6));
    }

    #[test]
    fn triangle_scores_one() {
        let g = SimilarityGraph::from_edges(3, &clique(0, 3));
        for sc in initial_scores(&g) {
            assert_eq!(sc.frequency, 3);
            assert!((sc.tentative_score - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn edgeless_graph_selects_every_node() {
        let g = SimilarityGraph::empty(5);
        let sol = solve(&g);
        assert_eq!(sol.selections.len(), 5);
        assert!(sol.selections.iter().all(|s| s.covered == vec![s.node]));
        assert_eq!(sol.selections, eager_solve_oracle(&g).selections);
    }

    #[test]
    fn star_selects_hub() {
        let edges: Vec<(usize, usize)> = (1..6).map(|i| (0, i)).collect();
        let g = SimilarityGraph::from_edges(6, &edges);
        let sol = solve(&g);
        assert_eq!(sol.selections.len(), 1);
        assert_eq!(sol.selections[0].node, 0);
        assert_eq!(sol.selections[0].covered.len(), 6);
        assert_eq!(sol.selections, eager_solve_oracle(&g).selections);
    }

    #[test]
    fn cliques() {
        let g = SimilarityGraph::from_edges(4, &clique(0, 4));
        assert_eq!(eager_solve_oracle(&g).selections.len(), 1);
        let mut e = clique(0, 3);
        e.extend(clique(3, 4));
        let g = SimilarityGraph::from_edges(7, &e);
        assert_eq!(eager_solve_oracle(&g).selections.len(), 2);
        assert_eq!(solve(&g).selections.len(), 2);
    }

    #[test]
    fn every_node_assigned() {
        let g = SimilarityGraph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
        let sol = solve(&g);
        let a = sol.assignment(6);
        assert!(a.iter().all(|&s| s < sol.selections.len()));
        for (v, &s) in a.iter().enumerate() {
            let rep = sol.selections[s].node;
            assert!(rep == v || g.neighbors(rep).contains(&v));
        }
    }
}
