//! Coarse-to-fine clustering loop.
//!
//! Each iteration works on the markers that are still unassigned:
//!
//! 1. orphans from earlier rounds are first probed against existing
//!    representatives;
//! 2. the rest are pre-screened, evaluated under relaxed thresholds and
//!    clustered with the set-cover solver;
//! 3. each member is aligned to its fixed representative, clamped into its
//!    marker and strictly verified;
//! 4. members failing verification become orphans for the next round. In the
//!    final round (zero slack) any remaining orphan becomes a singleton.

use std::io::{self, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{clamp_to_marker, edge_minmax_align, phase_correlate_nm, xy_minmax_align, AlignError, Translation};
use crate::geometry::{edge_displacements, match_polygons, DesignIndex, Marker, Pattern, Point, Polygon};
use crate::graph::{assemble, evaluate_pair_relaxed, evaluate_pairs, AnchoredPattern, RelaxedSlack, SimilarityGraph};
use crate::layout_io::{Assignment, ClusterReport, Constraint, LayoutDocument};
use crate::prescreen::{all_pairs, build_candidates_from, pair_passes, PrescreenConfig, ScreenFeatures, StageCounts};
use crate::raster::{cosine_similarity, dct_features, rasterize, Bitmap, DctFeature, DEFAULT_DCT_K, DEFAULT_GRID};
use crate::scp::{eager_solve_oracle, solve, SolverStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignerKind {
    /// Phase correlation on rasters.
    Fft,
    /// Interval competition on polygon bounding boxes, FFT when no
    /// correspondence exists.
    Geo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverKind {
    Lazy,
    Eager,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig {
    pub max_iterations: usize,
    /// Multipliers on the relaxation slack per iteration. The last iteration
    /// always runs with zero slack.
    pub slack_schedule: Vec<f64>,
    /// Aligner for the cosine constraint; edge movement always uses the
    /// geometric min-max solver.
    pub aligner: AlignerKind,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3,
            slack_schedule: vec![1.0, 0.5, 0.0],
            aligner: AlignerKind::Geo,
        }
    }
}

impl IterationConfig {
    fn slack_factor(&self, iteration: usize) -> f64 {
        if iteration + 1 >= self.max_iterations {
            return 0.0;
        }
        self.slack_schedule
            .get(iteration)
            .or(self.slack_schedule.last())
            .copied()
            .unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub grid: usize,
    pub dct_k: usize,
    pub iteration: IterationConfig,
    pub solver: SolverKind,
    pub prescreen: PrescreenConfig,
    pub prescreen_enabled: bool,
    /// Coarse cosine relaxation at full slack.
    pub cosine_slack: f64,
    /// Coarse edge relaxation at full slack, as a fraction of the threshold.
    pub edge_slack_fraction: f64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Keep each iteration's similarity graph in the outcome.
    pub keep_graphs: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID,
            dct_k: DEFAULT_DCT_K,
            iteration: IterationConfig::default(),
            solver: SolverKind::Lazy,
            prescreen: PrescreenConfig::default(),
            prescreen_enabled: true,
            cosine_slack: 0.05,
            edge_slack_fraction: 0.25,
            threads: None,
            keep_graphs: false,
        }
    }
}

/// One cluster; `members[0]` is the representative itself.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    /// Marker index of the representative.
    pub representative: usize,
    pub representative_center: Point,
    /// `(marker index, center)` pairs.
    pub members: Vec<(usize, Point)>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    pub orphans: Vec<usize>,
}

/// Outcome of refining one member. Scores are cosine similarities for the
/// cosine constraint and worst edge offsets (nm) for edge movement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub member: usize,
    pub representative: usize,
    pub anchor_score: f64,
    pub refined_score: f64,
    pub center: Point,
    pub accepted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub unassigned: usize,
    pub attached_by_probe: usize,
    pub prescreen: StageCounts,
    pub graph_edges: usize,
    pub clusters_formed: usize,
    pub solver: SolverStats,
    pub orphans: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub extract_ms: f64,
    pub prescreen_ms: f64,
    pub graph_ms: f64,
    pub solve_ms: f64,
    pub refine_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub markers: usize,
    pub timings: StageTimings,
    pub iterations: Vec<IterationStats>,
    pub final_clusters: usize,
    pub compression_ratio: f64,
}

impl RunStats {
    /// Fraction of candidate pairs eliminated by pre-screening in the first
    /// iteration.
    pub fn filter_rate(&self) -> f64 {
        self.iterations.first().map_or(0.0, |it| it.prescreen.filter_rate())
    }

    pub fn solver_totals(&self) -> SolverStats {
        self.iterations.iter().fold(SolverStats::default(), |mut acc, it| {
            acc.pops += it.solver.pops;
            acc.recomputations += it.solver.recomputations;
            acc.reinsertions += it.solver.reinsertions;
            acc
        })
    }
}

/// Similarity graph of one iteration; node `i` is marker `markers[i]`.
#[derive(Clone, Debug)]
pub struct IterationGraph {
    pub markers: Vec<usize>,
    pub graph: SimilarityGraph,
}

impl IterationGraph {
    /// Writes `i j dx dy` per edge with marker indices.
    pub fn dump(&self, out: &mut impl Write) -> io::Result<()> {
        for i in 0..self.graph.node_count() {
            for &j in self.graph.neighbors(i).iter().filter(|&&j| j > i) {
                let t = self.graph.alignment(i, j).expect("listed neighbor");
                writeln!(out, "{} {} {} {}", self.markers[i], self.markers[j], t.dx, t.dy)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: ClusterReport,
    pub clusters: ClusterSet,
    pub stats: RunStats,
    pub refinements: Vec<RefinementRecord>,
    /// Populated when `keep_graphs` is set.
    pub graphs: Vec<IterationGraph>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Shared read-only state of one run.
struct Context<'a> {
    doc: &'a LayoutDocument,
    index: DesignIndex,
    constraint: Constraint,
    cfg: &'a PipelineConfig,
}

impl<'a> Context<'a> {
    fn new(doc: &'a LayoutDocument, cfg: &'a PipelineConfig) -> Self {
        let polygons: Vec<Polygon> = doc.design_polygons.iter().map(|d| d.polygon.clone()).collect();
        Self {
            index: DesignIndex::new(polygons, 2 * doc.pattern_radius),
            constraint: doc.constraint(),
            doc,
            cfg,
        }
    }

    fn extract(&self, center: Point) -> Pattern {
        self.index.extract(center, self.doc.pattern_radius)
    }

    fn marker(&self, i: usize) -> &Marker {
        &self.doc.markers[i]
    }

    fn bitmap(&self, p: &Pattern) -> Bitmap {
        rasterize(p, self.cfg.grid)
    }

    fn feature(&self, p: &Pattern) -> DctFeature {
        dct_features(&self.bitmap(p), self.cfg.dct_k)
    }

    fn anchored(&self, p: Pattern) -> AnchoredPattern {
        AnchoredPattern::new(p, &self.constraint, self.cfg.grid, self.cfg.dct_k)
    }

    fn slack(&self, factor: f64) -> (RelaxedSlack, PrescreenConfig) {
        let edge = match self.constraint {
            Constraint::EdgeMove { threshold } => factor * self.cfg.edge_slack_fraction * threshold,
            Constraint::Cosine { .. } => 0.0,
        };
        let relaxed = RelaxedSlack {
            cosine: factor * self.cfg.cosine_slack,
            edge,
        };
        let mut pre = self.cfg.prescreen;
        pre.cosine_slack *= factor;
        pre.edge_slack = edge;
        (relaxed, pre)
    }
}

/// A fixed cluster representative.
struct Representative {
    marker: usize,
    center: Point,
    view: AnchoredPattern,
    screen: ScreenFeatures,
    feature: Option<DctFeature>,
    bitmap: Option<Bitmap>,
}

impl Representative {
    fn new(ctx: &Context<'_>, marker: usize) -> Self {
        let center = ctx.marker(marker).center();
        let pattern = ctx.extract(center);
        let (feature, bitmap) = match ctx.constraint {
            Constraint::Cosine { .. } => {
                let b = ctx.bitmap(&pattern);
                (Some(dct_features(&b, ctx.cfg.dct_k)), Some(b))
            }
            Constraint::EdgeMove { .. } => (None, None),
        };
        let screen = ScreenFeatures::new(&pattern, ctx.cfg.prescreen.quantum);
        Self {
            marker,
            center,
            view: ctx.anchored(pattern),
            screen,
            feature,
            bitmap,
        }
    }
}

/// Strict edge-movement check: worst corresponding edge offset, or `None`
/// when the patterns do not correspond.
fn edge_residual(rep: &Pattern, member: &Pattern) -> Option<i64> {
    let corr = match_polygons(rep, member, Point::ORIGIN)
        .ok()
        .filter(|c| c.is_bijective())?;
    let disp = edge_displacements(rep, member, &corr).ok()?;
    Some(disp.iter().map(|d| d.offset.abs()).max().unwrap_or(0))
}

/// Aligns one member to its representative and verifies the strict constraint.
fn refine_member(ctx: &Context<'_>, rep: &Representative, member: usize, coarse: Translation) -> RefinementRecord {
    let marker = ctx.marker(member);
    let anchor = marker.center();
    let pattern = ctx.extract(anchor);
    let record = |anchor_score: f64, refined_score: f64, center: Point, accepted: bool| RefinementRecord {
        member,
        representative: rep.marker,
        anchor_score,
        refined_score,
        center,
        accepted,
    };
    match ctx.constraint {
        Constraint::Cosine { threshold } => {
            let rep_feature = rep.feature.as_ref().expect("cosine representative has features");
            let member_bitmap = ctx.bitmap(&pattern);
            let anchor_score = cosine_similarity(rep_feature, &dct_features(&member_bitmap, ctx.cfg.dct_k));
            let fft = || match phase_correlate_nm(
                rep.bitmap.as_ref().expect("cosine representative has a raster"),
                &member_bitmap,
            ) {
                Ok(t) => Some(t),
                Err(AlignError::DegenerateSpectrum) => None,
                Err(AlignError::NoCorrespondence) => unreachable!(),
            };
            let t_opt = match ctx.cfg.iteration.aligner {
                AlignerKind::Geo => xy_minmax_align(&rep.view.pattern, &pattern, coarse).ok().or_else(fft),
                AlignerKind::Fft => fft(),
            };
            let t = clamp_to_marker(t_opt.unwrap_or(Translation::ZERO), anchor, marker);
            let (center, score) = if t == Translation::ZERO {
                (anchor, anchor_score)
            } else {
                let moved = t.apply(anchor);
                let s = cosine_similarity(rep_feature, &ctx.feature(&ctx.extract(moved)));
                if s >= anchor_score {
                    (moved, s)
                } else {
                    (anchor, anchor_score)
                }
            };
            record(anchor_score, score, center, score >= threshold)
        }
        Constraint::EdgeMove { threshold } => {
            let worst = |r: Option<i64>| r.map_or(f64::INFINITY, |v| v as f64);
            let anchor_score = worst(edge_residual(&rep.view.pattern, &pattern));
            let mut best = (anchor_score, anchor);
            let mut current = pattern;
            let mut center = anchor;
            let mut hint = coarse;
            // Clipping at the new center can change the content, so realign
            // once more from the re-extracted pattern.
            for _ in 0..2 {
                let offset = current.content_offset();
                let by_bbox = Translation::new(offset.x - rep.view.offset.x, offset.y - rep.view.offset.y);
                let t = [hint, by_bbox, Translation::ZERO]
                    .iter()
                    .find_map(|h| {
                        let corr = match_polygons(&rep.view.pattern, &current, h.as_shape_shift())
                            .ok()
                            .filter(|c| c.is_bijective())?;
                        edge_displacements(&rep.view.pattern, &current, &corr).ok()
                    })
                    .map_or(hint, |d| edge_minmax_align(&d).0);
                let step = clamp_to_marker(t, center, marker);
                if step == Translation::ZERO {
                    break;
                }
                center = step.apply(center);
                current = ctx.extract(center);
                let score = worst(edge_residual(&rep.view.pattern, &current));
                if score < best.0 {
                    best = (score, center);
                }
                if score <= threshold {
                    break;
                }
                hint = Translation::ZERO;
            }
            record(anchor_score, best.0, best.1, best.0 <= threshold)
        }
    }
}

/// Runs the full clustering loop.
pub fn run(doc: &LayoutDocument, cfg: &PipelineConfig) -> RunOutcome {
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(|| run_inner(doc, cfg)),
        None => run_inner(doc, cfg),
    }
}

fn run_inner(doc: &LayoutDocument, cfg: &PipelineConfig) -> RunOutcome {
    let start = Instant::now();
    let ctx = Context::new(doc, cfg);
    let n = doc.markers.len();
    let mut stats = RunStats {
        markers: n,
        ..RunStats::default()
    };
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut reps: Vec<Representative> = Vec::new();
    let mut refinements = Vec::new();
    let mut graphs = Vec::new();
    let mut unassigned: Vec<usize> = (0..n).collect();
    let max_iter = cfg.iteration.max_iterations.max(1);
    let mut iterations_used = 0;

    for it in 0..max_iter {
        if unassigned.is_empty() {
            break;
        }
        iterations_used = it + 1;
        let last = it + 1 == max_iter;
        let (slack, pre_cfg) = ctx.slack(cfg.iteration.slack_factor(it));
        let mut it_stats = IterationStats {
            unassigned: unassigned.len(),
            ..IterationStats::default()
        };

        let t = Instant::now();
        let mut views: Vec<AnchoredPattern> = unassigned
            .par_iter()
            .map(|&m| ctx.anchored(ctx.extract(ctx.marker(m).center())))
            .collect();
        let mut screens: Vec<ScreenFeatures> = views
            .par_iter()
            .map(|v| ScreenFeatures::new(&v.pattern, pre_cfg.quantum))
            .collect();
        stats.timings.extract_ms += ms(t);

        // Probe orphans against the representatives formed so far.
        if !reps.is_empty() {
            let t = Instant::now();
            let probes: Vec<Option<(usize, RefinementRecord)>> = unassigned
                .par_iter()
                .zip(views.par_iter().zip(screens.par_iter()))
                .map(|(&m, (view, screen))| {
                    reps.iter().enumerate().find_map(|(ci, rep)| {
                        if !pair_passes(&rep.screen, screen, &ctx.constraint, &pre_cfg) {
                            return None;
                        }
                        let coarse = evaluate_pair_relaxed(&rep.view, view, &ctx.constraint, slack)?;
                        let rec = refine_member(&ctx, rep, m, coarse);
                        rec.accepted.then_some((ci, rec))
                    })
                })
                .collect();
            let mut keep = Vec::with_capacity(unassigned.len());
            for (k, probe) in probes.into_iter().enumerate() {
                match probe {
                    Some((ci, rec)) => {
                        clusters[ci].members.push((rec.member, rec.center));
                        refinements.push(rec);
                        it_stats.attached_by_probe += 1;
                    }
                    None => keep.push(k),
                }
            }
            unassigned = keep.iter().map(|&k| unassigned[k]).collect();
            views = keep.iter().map(|&k| views[k].clone()).collect();
            screens = keep.iter().map(|&k| screens[k].clone()).collect();
            stats.timings.refine_ms += ms(t);
            if unassigned.is_empty() {
                stats.iterations.push(it_stats);
                break;
            }
        }

        let t = Instant::now();
        let candidates = if cfg.prescreen_enabled {
            build_candidates_from(&screens, &ctx.constraint, &pre_cfg)
        } else {
            all_pairs(unassigned.len())
        };
        it_stats.prescreen = candidates.stats;
        stats.timings.prescreen_ms += ms(t);

        let t = Instant::now();
        let results = evaluate_pairs(&views, &candidates.pairs, &ctx.constraint, slack);
        let graph = assemble(unassigned.len(), &candidates.pairs, &results);
        it_stats.graph_edges = graph.edge_count();
        stats.timings.graph_ms += ms(t);

        let t = Instant::now();
        let solution = match cfg.solver {
            SolverKind::Lazy => solve(&graph),
            SolverKind::Eager => eager_solve_oracle(&graph),
        };
        it_stats.solver = solution.stats;
        it_stats.clusters_formed = solution.selections.len();
        stats.timings.solve_ms += ms(t);
        if cfg.keep_graphs {
            graphs.push(IterationGraph {
                markers: unassigned.clone(),
                graph: graph.clone(),
            });
        }

        // A representative always belongs to its own cluster, even when an
        // earlier selection had already covered it.
        let mut owner = solution.assignment(graph.node_count());
        for (s, sel) in solution.selections.iter().enumerate() {
            owner[sel.node] = s;
        }
        let t = Instant::now();
        let first_cluster = clusters.len();
        for sel in &solution.selections {
            let rep = Representative::new(&ctx, unassigned[sel.node]);
            clusters.push(Cluster {
                representative: rep.marker,
                representative_center: rep.center,
                members: vec![(rep.marker, rep.center)],
            });
            reps.push(rep);
        }
        let jobs: Vec<(usize, usize, Translation)> = (0..graph.node_count())
            .filter(|&v| solution.selections[owner[v]].node != v)
            .map(|v| {
                let s = owner[v];
                let rep_node = solution.selections[s].node;
                let coarse = graph
                    .alignment(rep_node, v)
                    .expect("covered nodes are adjacent to their representative");
                (first_cluster + s, v, coarse)
            })
            .collect();
        let outcomes: Vec<RefinementRecord> = jobs
            .par_iter()
            .map(|&(ci, v, coarse)| refine_member(&ctx, &reps[ci], unassigned[v], coarse))
            .collect();
        let mut orphans = Vec::new();
        for ((ci, _, _), rec) in jobs.iter().zip(outcomes) {
            if rec.accepted {
                clusters[*ci].members.push((rec.member, rec.center));
            } else {
                orphans.push(rec.member);
            }
            refinements.push(rec);
        }
        stats.timings.refine_ms += ms(t);
        orphans.sort_unstable();
        it_stats.orphans = orphans.len();
        stats.iterations.push(it_stats);

        if last {
            for m in orphans.drain(..) {
                let center = ctx.marker(m).center();
                clusters.push(Cluster {
                    representative: m,
                    representative_center: center,
                    members: vec![(m, center)],
                });
            }
        }
        unassigned = orphans;
    }

    let mut assignments: Vec<Option<Assignment>> = vec![None; n];
    for (cid, c) in clusters.iter().enumerate() {
        for &(m, center) in &c.members {
            assignments[m] = Some(Assignment {
                marker_id: doc.markers[m].id,
                cluster_id: cid,
                center,
            });
        }
    }
    let report = ClusterReport::new(
        assignments
            .into_iter()
            .map(|a| a.expect("every marker is assigned on termination"))
            .collect(),
        iterations_used,
    );
    stats.final_clusters = report.cluster_count;
    stats.compression_ratio = report.compression_ratio;
    stats.timings.total_ms = ms(start);
    RunOutcome {
        report,
        clusters: ClusterSet {
            clusters,
            orphans: unassigned,
        },
        stats,
        refinements,
        graphs,
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum Violation {
    #[error("marker index {0} is not assigned to any cluster")]
    Unassigned(usize),
    #[error("marker index {0} appears in more than one cluster")]
    Duplicate(usize),
    #[error("marker index {0} is still an orphan")]
    Orphan(usize),
    #[error("center {center:?} of marker index {marker} lies outside its marker")]
    CenterOutsideMarker { marker: usize, center: Point },
    #[error("cluster {cluster} does not list its representative first")]
    RepresentativeMissing { cluster: usize },
    #[error("marker index {marker} fails the constraint against representative {representative}: {detail}")]
    ConstraintViolated {
        marker: usize,
        representative: usize,
        detail: String,
    },
}

/// Re-checks a finished cluster set from scratch: coverage, center validity
/// and the strict constraint of every member against its representative.
pub fn verify_clusterset(cs: &ClusterSet, doc: &LayoutDocument, grid: usize, dct_k: usize) -> Result<(), Violation> {
    if let Some(&o) = cs.orphans.first() {
        return Err(Violation::Orphan(o));
    }
    let n = doc.markers.len();
    let mut seen = vec![false; n];
    for c in &cs.clusters {
        for &(m, _) in &c.members {
            if m >= n {
                return Err(Violation::Unassigned(m));
            }
            if std::mem::replace(&mut seen[m], true) {
                return Err(Violation::Duplicate(m));
            }
        }
    }
    if let Some(m) = seen.iter().position(|s| !s) {
        return Err(Violation::Unassigned(m));
    }

    let polygons: Vec<Polygon> = doc.design_polygons.iter().map(|d| d.polygon.clone()).collect();
    let index = DesignIndex::new(polygons, 2 * doc.pattern_radius);
    let radius = doc.pattern_radius;
    let constraint = doc.constraint();
    let check = |c: &Cluster| -> Result<(), Violation> {
        if c.members.first() != Some(&(c.representative, c.representative_center)) {
            return Err(Violation::RepresentativeMissing {
                cluster: c.representative,
            });
        }
        for &(m, center) in &c.members {
            if !doc.markers[m].rect.contains_point(center) {
                return Err(Violation::CenterOutsideMarker { marker: m, center });
            }
        }
        let rep = index.extract(c.representative_center, radius);
        match constraint {
            Constraint::Cosine { threshold } => {
                let rf = dct_features(&rasterize(&rep, grid), dct_k);
                for &(m, center) in &c.members[1..] {
                    let mf = dct_features(&rasterize(&index.extract(center, radius), grid), dct_k);
                    let s = cosine_similarity(&rf, &mf);
                    if s < threshold {
                        return Err(Violation::ConstraintViolated {
                            marker: m,
                            representative: c.representative,
                            detail: format!("cosine {s:.6} < {threshold}"),
                        });
                    }
                }
            }
            Constraint::EdgeMove { threshold } => {
                for &(m, center) in &c.members[1..] {
                    let member = index.extract(center, radius);
                    let fail = |detail: String| Violation::ConstraintViolated {
                        marker: m,
                        representative: c.representative,
                        detail,
                    };
                    let corr = match_polygons(&rep, &member, Point::ORIGIN).map_err(|e| fail(e.to_string()))?;
                    if !corr.is_bijective() {
                        return Err(fail(format!("polygon counts differ ({:?})", corr.side)));
                    }
                    let disp = edge_displacements(&rep, &member, &corr).map_err(|e| fail(e.to_string()))?;
                    if let Some(d) = disp.iter().find(|d| d.offset.abs() as f64 > threshold) {
                        return Err(fail(format!("edge offset {} exceeds {threshold}", d.offset)));
                    }
                }
            }
        }
        Ok(())
    };
    let results: Vec<Result<(), Violation>> = cs.clusters.par_iter().map(check).collect();
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use crate::layout_io::{ConstraintKind, DesignPolygon};

    fn doc(polys: &[Rect], markers: &[Rect], constraint: Constraint) -> LayoutDocument {
        LayoutDocument {
            design_polygons: polys
                .iter()
                .enumerate()
                .map(|(i, r)| DesignPolygon {
                    id: i as u64,
                    polygon: Polygon::from_rect(r),
                })
                .collect(),
            markers: markers
                .iter()
                .enumerate()
                .map(|(i, &rect)| Marker { id: i as u64, rect })
                .collect(),
            pattern_radius: 128,
            constraint_kind: ConstraintKind::Cosine,
            threshold: 0.0,
        }
        .with_constraint(constraint)
    }

    #[test]
    fn single_marker_single_cluster() {
        let d = doc(
            &[Rect::new(-10, -10, 10, 10)],
            &[Rect::new(0, 0, 0, 0)],
            Constraint::Cosine { threshold: 0.9 },
        );
        let out = run(&d, &PipelineConfig::default());
        assert_eq!(out.report.cluster_count, 1);
        assert_eq!(out.report.iterations_used, 1);
    }

    #[test]
    fn empty_design_gives_one_cluster() {
        let markers = [
            Rect::new(0, 0, 10, 10),
            Rect::new(1000, 0, 1010, 10),
            Rect::new(0, 2000, 4, 2004),
        ];
        for c in [
            Constraint::Cosine { threshold: 0.99 },
            Constraint::EdgeMove { threshold: 0.0 },
        ] {
            let d = doc(&[], &markers, c);
            let out = run(&d, &PipelineConfig::default());
            assert_eq!(out.report.cluster_count, 1);
            verify_clusterset(&out.clusters, &d, 64, 32).unwrap();
        }
    }

    /// Rep at x = 0 and a member whose content sits 24 nm to the right of its
    /// marker center; the marker allows up to 40 nm of movement.
    fn shifted_pair(constraint: Constraint) -> LayoutDocument {
        let shape = |cx: i64| {
            vec![
                Rect::new(cx - 60, -40, cx + 20, 30),
                Rect::new(cx + 40, -70, cx + 70, 50),
            ]
        };
        let mut polys = shape(0);
        polys.extend(shape(1000 + 24));
        doc(
            &polys,
            &[Rect::new(-40, -40, 40, 40), Rect::new(960, -40, 1040, 40)],
            constraint,
        )
    }

    #[test]
    fn identical_member_accepted_with_zero_shift() {
        let d = shifted_pair(Constraint::EdgeMove { threshold: 0.0 });
        let cfg = PipelineConfig::default();
        let ctx = Context::new(&d, &cfg);
        let rep = Representative::new(&ctx, 0);
        let rec = refine_member(&ctx, &rep, 0, Translation::ZERO);
        assert!(rec.accepted);
        assert_eq!(rec.center, Point::new(0, 0));
    }

    #[test]
    fn shifted_member_moves_center() {
        for c in [
            Constraint::EdgeMove { threshold: 0.0 },
            Constraint::Cosine { threshold: 0.999 },
        ] {
            let d = shifted_pair(c);
            let cfg = PipelineConfig::default();
            let ctx = Context::new(&d, &cfg);
            let rep = Representative::new(&ctx, 0);
            let rec = refine_member(&ctx, &rep, 1, Translation::ZERO);
            assert!(rec.accepted, "{c:?} {rec:?}");
            assert_eq!(rec.center, Point::new(1024, 0));
        }
    }

    #[test]
    fn unreachable_shift_orphans() {
        // member marker is a point: no freedom to move
        let mut d = shifted_pair(Constraint::EdgeMove { threshold: 2.0 });
        d.markers[1].rect = Rect::new(1000, 0, 1000, 0);
        let cfg = PipelineConfig::default();
        let ctx = Context::new(&d, &cfg);
        let rep = Representative::new(&ctx, 0);
        let rec = refine_member(&ctx, &rep, 1, Translation::new(24, 0));
        assert!(!rec.accepted);
        let out = run(&d, &cfg);
        assert_eq!(out.report.cluster_count, 2);
        verify_clusterset(&out.clusters, &d, 64, 32).unwrap();
    }

    #[test]
    fn verify_catches_corruption() {
        let d = shifted_pair(Constraint::EdgeMove { threshold: 0.0 });
        let out = run(&d, &PipelineConfig::default());
        assert_eq!(out.report.cluster_count, 1);
        verify_clusterset(&out.clusters, &d, 64, 32).unwrap();
        let mut bad = out.clusters.clone();
        bad.clusters[0].members[1].1 = Point::new(5000, 0);
        assert!(matches!(
            verify_clusterset(&bad, &d, 64, 32),
            Err(Violation::CenterOutsideMarker { marker: 1, .. })
        ));
        let mut bad = out.clusters.clone();
        bad.clusters[0].members[1].1 = Point::new(1000, 0);
        assert!(matches!(
            verify_clusterset(&bad, &d, 64, 32),
            Err(Violation::ConstraintViolated { marker: 1, .. })
        ));
        let mut bad = out.clusters;
        bad.clusters[0].members.pop();
        assert!(matches!(
            verify_clusterset(&bad, &d, 64, 32),
            Err(Violation::Unassigned(1))
        ));
    }

    #[test]
    fn slack_schedule_ends_at_zero() {
        let it = IterationConfig::default();
        assert_eq!(it.slack_factor(0), 1.0);
        assert_eq!(it.slack_factor(1), 0.5);
        assert_eq!(it.slack_factor(2), 0.0);
        let short = IterationConfig {
            max_iterations: 1,
            ..IterationConfig::default()
        };
        assert_eq!(short.slack_factor(0), 0.0);
    }
}
