//! Ablation harness over synthetic scenarios.
//!
//! A matrix file lists one scenario per line as `key=value` tokens:
//!
//! ```text
//! # name  templates instances jitter seed constraint threshold
//! name=small templates=5 instances=10 jitter=0 seed=1 constraint=cosine threshold=0.95
//! ```
//!
//! Every scenario runs a baseline plus toggled variants: pre-screen off (small
//! N only), eager solver, and the FFT aligner (cosine only).

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Coord;
use crate::layout_io::{generate_synthetic, Constraint, ConstraintKind};
use crate::pipeline::{run, AlignerKind, PipelineConfig, SolverKind};

/// Pre-screen-off runs evaluate all N² / 2 pairs, so they are skipped above
/// this many markers.
pub const PRESCREEN_OFF_MAX_N: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub templates: usize,
    pub instances: usize,
    pub jitter: Coord,
    pub seed: u64,
    pub constraint: Constraint,
}

impl Scenario {
    pub fn marker_count(&self) -> usize {
        self.templates * self.instances
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum BenchError {
    #[error("line {line}: malformed token `{token}`, expected key=value")]
    Token { line: usize, token: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    Value { line: usize, key: String, value: String },
    #[error("line {line}: missing `{key}`")]
    Missing { line: usize, key: &'static str },
    #[error("line {line}: duplicate scenario name `{name}`")]
    DuplicateName { line: usize, name: String },
    #[error("matrix lists no scenarios")]
    Empty,
}

/// Parses a whole matrix; any error is reported before anything runs.
pub fn parse_matrix(text: &str) -> Result<Vec<Scenario>, BenchError> {
    let mut out = Vec::new();
    let mut names = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut name = None;
        let mut templates = None;
        let mut instances = None;
        let mut jitter = None;
        let mut seed = None;
        let mut kind = None;
        let mut threshold = None;
        for token in body.split_whitespace() {
            let (key, value) = token.split_once('=').ok_or_else(|| BenchError::Token {
                line,
                token: token.to_string(),
            })?;
            let bad = || BenchError::Value {
                line,
                key: key.to_string(),
                value: value.to_string(),
            };
            match key {
                "name" => name = Some(value.to_string()),
                "templates" => templates = Some(value.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(bad)?),
                "instances" => instances = Some(value.parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(bad)?),
                "jitter" => jitter = Some(value.parse::<Coord>().ok().filter(|&v| v >= 0).ok_or_else(bad)?),
                "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad())?),
                "constraint" => {
                    kind = Some(
                        value
                            .to_ascii_uppercase()
                            .parse::<ConstraintKind>()
                            .map_err(|_| bad())?,
                    )
                }
                "threshold" => {
                    threshold = Some(
                        value
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite() && *v >= 0.0)
                            .ok_or_else(bad)?,
                    )
                }
                _ => {
                    return Err(BenchError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
            }
        }
        let name = name.ok_or(BenchError::Missing { line, key: "name" })?;
        let kind = kind.ok_or(BenchError::Missing {
            line,
            key: "constraint",
        })?;
        let threshold = threshold.ok_or(BenchError::Missing { line, key: "threshold" })?;
        let constraint = match kind {
            ConstraintKind::Cosine if threshold <= 1.0 => Constraint::Cosine { threshold },
            ConstraintKind::Cosine => {
                return Err(BenchError::Value {
                    line,
                    key: "threshold".into(),
                    value: threshold.to_string(),
                })
            }
            ConstraintKind::EdgeMove => Constraint::EdgeMove { threshold },
        };
        if !names.insert(name.clone()) {
            return Err(BenchError::DuplicateName { line, name });
        }
        out.push(Scenario {
            name,
            templates: templates.ok_or(BenchError::Missing { line, key: "templates" })?,
            instances: instances.ok_or(BenchError::Missing { line, key: "instances" })?,
            jitter: jitter.unwrap_or(0),
            seed: seed.unwrap_or(0),
            constraint,
        });
    }
    if out.is_empty() {
        return Err(BenchError::Empty);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub scenario: String,
    pub variant: String,
    pub n: usize,
    pub constraint: ConstraintKind,
    pub extract_ms: f64,
    pub prescreen_ms: f64,
    pub graph_ms: f64,
    pub solve_ms: f64,
    pub refine_ms: f64,
    pub total_ms: f64,
    pub filter_rate: f64,
    pub pairs_evaluated: u64,
    pub cluster_count: usize,
    pub iterations: usize,
    pub solver_pops: u64,
    pub solver_recomputations: u64,
    /// Mean improvement of the refined score over the anchor score across
    /// accepted members (cosine gain, or edge-offset reduction in nm).
    pub mean_similarity_delta: f64,
}

/// Runs one variant of a scenario.
pub fn run_variant(s: &Scenario, variant: &str, cfg: &PipelineConfig) -> BenchRecord {
    let doc = generate_synthetic(s.templates, s.instances, s.jitter, s.seed).with_constraint(s.constraint);
    let out = run(&doc, cfg);
    let accepted: Vec<f64> = out
        .refinements
        .iter()
        .filter(|r| r.accepted)
        .map(|r| match s.constraint {
            Constraint::Cosine { .. } => r.refined_score - r.anchor_score,
            Constraint::EdgeMove { .. } if r.anchor_score.is_finite() => r.anchor_score - r.refined_score,
            Constraint::EdgeMove { .. } => 0.0,
        })
        .collect();
    let mean_delta = if accepted.is_empty() {
        0.0
    } else {
        accepted.iter().sum::<f64>() / accepted.len() as f64
    };
    let t = &out.stats.timings;
    let solver = out.stats.solver_totals();
    BenchRecord {
        scenario: s.name.clone(),
        variant: variant.to_string(),
        n: s.marker_count(),
        constraint: s.constraint.kind(),
        extract_ms: t.extract_ms,
        prescreen_ms: t.prescreen_ms,
        graph_ms: t.graph_ms,
        solve_ms: t.solve_ms,
        refine_ms: t.refine_ms,
        total_ms: t.total_ms,
        filter_rate: out.stats.filter_rate(),
        pairs_evaluated: out.stats.iterations.iter().map(|it| it.prescreen.after_stage_b).sum(),
        cluster_count: out.report.cluster_count,
        iterations: out.report.iterations_used,
        solver_pops: solver.pops,
        solver_recomputations: solver.recomputations,
        mean_similarity_delta: mean_delta,
    }
}

/// Variant names and configs applicable to a scenario.
pub fn variants(s: &Scenario, base: &PipelineConfig) -> Vec<(&'static str, PipelineConfig)> {
    let mut out = vec![("baseline", base.clone())];
    if s.marker_count() <= PRESCREEN_OFF_MAX_N {
        out.push((
            "prescreen-off",
            PipelineConfig {
                prescreen_enabled: false,
                ..base.clone()
            },
        ));
    }
    out.push((
        "eager",
        PipelineConfig {
            solver: SolverKind::Eager,
            ..base.clone()
        },
    ));
    if matches!(s.constraint, Constraint::Cosine { .. }) {
        let mut fft = base.clone();
        fft.iteration.aligner = AlignerKind::Fft;
        out.push(("fft", fft));
    }
    out
}

/// Runs every scenario and variant sequentially.
pub fn run_matrix(scenarios: &[Scenario], base: &PipelineConfig) -> Vec<BenchRecord> {
    scenarios
        .iter()
        .flat_map(|s| {
            variants(s, base)
                .into_iter()
                .map(move |(name, cfg)| run_variant(s, name, &cfg))
        })
        .collect()
}

const CSV_HEADER: &str = "scenario,variant,n,constraint,extract_ms,prescreen_ms,graph_ms,solve_ms,refine_ms,total_ms,filter_rate,pairs_evaluated,cluster_count,iterations,solver_pops,solver_recomputations,mean_similarity_delta";

pub fn render_csv(records: &[BenchRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.6},{},{},{},{},{},{:.6}",
            r.scenario,
            r.variant,
            r.n,
            r.constraint,
            r.extract_ms,
            r.prescreen_ms,
            r.graph_ms,
            r.solve_ms,
            r.refine_ms,
            r.total_ms,
            r.filter_rate,
            r.pairs_evaluated,
            r.cluster_count,
            r.iterations,
            r.solver_pops,
            r.solver_recomputations,
            r.mean_similarity_delta
        );
    }
    s
}

/// Aligned text table followed by per-scenario ratios against the baseline.
pub fn render_table(records: &[BenchRecord]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:<14} {:>6} {:<9} {:>10} {:>10} {:>10} {:>8} {:>9} {:>9} {:>10}",
        "scenario",
        "variant",
        "n",
        "kind",
        "total_ms",
        "graph_ms",
        "solve_ms",
        "filter",
        "pairs",
        "clusters",
        "recompute"
    );
    for r in records {
        let _ = writeln!(
            s,
            "{:<16} {:<14} {:>6} {:<9} {:>10.1} {:>10.1} {:>10.2} {:>8.4} {:>9} {:>9} {:>10}",
            r.scenario,
            r.variant,
            r.n,
            r.constraint.to_string(),
            r.total_ms,
            r.graph_ms,
            r.solve_ms,
            r.filter_rate,
            r.pairs_evaluated,
            r.cluster_count,
            r.solver_recomputations
        );
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
    let mut scenarios: Vec<&str> = records.iter().map(|r| r.scenario.as_str()).collect();
    scenarios.dedup();
    for name in scenarios {
        let find = |v: &str| records.iter().find(|r| r.scenario == name && r.variant == v);
        let Some(base) = find("baseline") else { continue };
        let _ = write!(s, "{name}:");
        if let Some(off) = find("prescreen-off") {
            let _ = write!(
                s,
                " prescreen graph speedup {:.1}x (clusters {} vs {});",
                ratio(off.graph_ms + off.prescreen_ms, base.graph_ms + base.prescreen_ms),
                base.cluster_count,
                off.cluster_count
            );
        }
        if let Some(e) = find("eager") {
            let _ = write!(
                s,
                " lazy/eager recomputations {:.4} (clusters {} vs {});",
                ratio(base.solver_recomputations as f64, e.solver_recomputations as f64),
                base.cluster_count,
                e.cluster_count
            );
        }
        if let Some(f) = find("fft") {
            let _ = write!(
                s,
                " fft/geo refine time {:.2}x, similarity delta geo {:.5} fft {:.5};",
                ratio(f.refine_ms, base.refine_ms),
                base.mean_similarity_delta,
                f.mean_similarity_delta
            );
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_matrix_with_comments() {
        let m = parse_matrix(
            "# header\n\nname=a templates=2 instances=3 jitter=4 seed=9 constraint=cosine threshold=0.9\n\
             name=b templates=1 instances=1 constraint=EDGEMOVE threshold=5 # trailing\n",
        )
        .unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].marker_count(), 6);
        assert_eq!(m[0].jitter, 4);
        assert_eq!(m[1].constraint, Constraint::EdgeMove { threshold: 5.0 });
    }

    #[test]
    fn rejects_bad_config_before_running() {
        let cases = [
            ("", BenchError::Empty),
            (
                "name=a templates=x instances=1 constraint=cosine threshold=0.9",
                BenchError::Value {
                    line: 1,
                    key: "templates".into(),
                    value: "x".into(),
                },
            ),
            (
                "name=a templates=1 instances=1 threshold=0.9",
                BenchError::Missing {
                    line: 1,
                    key: "constraint",
                },
            ),
            (
                "name=a bogus",
                BenchError::Token {
                    line: 1,
                    token: "bogus".into(),
                },
            ),
            (
                "name=a color=red",
                BenchError::UnknownKey {
                    line: 1,
                    key: "color".into(),
                },
            ),
            (
                "name=a templates=1 instances=1 constraint=cosine threshold=1.5",
                BenchError::Value {
                    line: 1,
                    key: "threshold".into(),
                    value: "1.5".into(),
                },
            ),
        ];
        for (text, err) in cases {
            assert_eq!(parse_matrix(text), Err(err), "{text}");
        }
        let dup = "name=a templates=1 instances=1 constraint=cosine threshold=0.9\n\
                   name=a templates=1 instances=1 constraint=cosine threshold=0.9";
        assert!(matches!(
            parse_matrix(dup),
            Err(BenchError::DuplicateName { line: 2, .. })
        ));
    }

    #[test]
    fn variants_depend_on_scenario() {
        let s = |n, constraint| Scenario {
            name: "s".into(),
            templates: 1,
            instances: n,
            jitter: 0,
            seed: 0,
            constraint,
        };
        let base = PipelineConfig::default();
        let names = |v: Vec<(&'static str, PipelineConfig)>| v.into_iter().map(|(n, _)| n).collect::<Vec<_>>();
        assert_eq!(
            names(variants(&s(10, Constraint::Cosine { threshold: 0.9 }), &base)),
            ["baseline", "prescreen-off", "eager", "fft"]
        );
        assert_eq!(
            names(variants(&s(5000, Constraint::EdgeMove { threshold: 1.0 }), &base)),
            ["baseline", "eager"]
        );
    }

    #[test]
    fn small_matrix_runs() {
        let m = parse_matrix("name=t templates=3 instances=4 jitter=8 seed=2 constraint=edgemove threshold=4").unwrap();
        let recs = run_matrix(&m, &PipelineConfig::default());
        assert_eq!(recs.len(), 3);
        for r in &recs {
            assert!((0.0..=1.0).contains(&r.filter_rate));
            assert!(r.total_ms >= 0.0 && r.graph_ms >= 0.0);
            assert_eq!(r.cluster_count, recs[0].cluster_count);
        }
        let csv = render_csv(&recs);
        assert_eq!(csv.lines().count(), 4);
        assert!(render_table(&recs).contains("lazy/eager"));
    }
}
