use pattern_forge::geometry::{DesignIndex, Marker, Pattern, Polygon, Rect};
use pattern_forge::graph::{assemble, evaluate_pairs, AnchoredPattern, RelaxedSlack};
use pattern_forge::layout_io::{
    generate_synthetic, generate_synthetic_labeled, parse_report, write_report, Constraint, ConstraintKind,
    DesignPolygon, LayoutDocument, SyntheticLayout,
};
use pattern_forge::pipeline::{run, verify_clusterset, AlignerKind, PipelineConfig, SolverKind};
use pattern_forge::prescreen::{build_candidates, PrescreenConfig};

const COSINE: Constraint = Constraint::Cosine { threshold: 0.95 };
const EDGE: Constraint = Constraint::EdgeMove { threshold: 10.0 };

fn extract_all(doc: &LayoutDocument) -> Vec<Pattern> {
    let polys: Vec<Polygon> = doc.design_polygons.iter().map(|d| d.polygon.clone()).collect();
    let index = DesignIndex::new(polys, 2 * doc.pattern_radius);
    doc.markers
        .iter()
        .map(|m| index.extract(m.center(), doc.pattern_radius))
        .collect()
}

fn report_csv(doc: &LayoutDocument, cfg: &PipelineConfig) -> Vec<u8> {
    let out = run(doc, cfg);
    let mut buf = Vec::new();
    write_report(&out.report, &doc.markers, &mut buf).unwrap();
    buf
}

#[test]
fn jitter_free_layouts_recover_every_template() {
    for seed in [1, 2, 3] {
        for c in [COSINE, EDGE] {
            for (k, m) in [(1, 7), (4, 25), (10, 10)] {
                let doc = generate_synthetic(k, m, 0, seed).with_constraint(c);
                let out = run(&doc, &PipelineConfig::default());
                assert_eq!(out.report.cluster_count, k, "seed {seed} {c:?} k={k} m={m}");
                verify_clusterset(&out.clusters, &doc, 64, 32).unwrap();
            }
        }
    }
}

#[test]
fn jittered_layouts_stay_sound() {
    for c in [COSINE, EDGE] {
        for jitter in [4, 16, 40] {
            let doc = generate_synthetic(5, 10, jitter, 11).with_constraint(c);
            let out = run(&doc, &PipelineConfig::default());
            verify_clusterset(&out.clusters, &doc, 64, 32).unwrap();
            assert!(
                out.report.cluster_count <= 6,
                "{c:?} jitter {jitter}: {}",
                out.report.cluster_count
            );
            assert!(out.report.compression_ratio >= 0.88);
        }
    }
}

#[test]
fn report_round_trips_through_csv() {
    let doc = generate_synthetic(3, 4, 8, 5).with_constraint(EDGE);
    let out = run(&doc, &PipelineConfig::default());
    let mut buf = Vec::new();
    write_report(&out.report, &doc.markers, &mut buf).unwrap();
    assert_eq!(parse_report(std::str::from_utf8(&buf).unwrap()).unwrap(), out.report);
}

#[test]
fn empty_design_layer_is_one_cluster() {
    let doc = LayoutDocument {
        design_polygons: Vec::<DesignPolygon>::new(),
        markers: (0..6)
            .map(|i| Marker {
                id: i,
                rect: Rect::new(1000 * i as i64, 0, 1000 * i as i64 + 20, 20),
            })
            .collect(),
        pattern_radius: 200,
        constraint_kind: ConstraintKind::Cosine,
        threshold: 0.99,
    };
    let out = run(&doc, &PipelineConfig::default());
    assert_eq!(out.report.cluster_count, 1);
    assert!((out.report.compression_ratio - 5.0 / 6.0).abs() < 1e-12);
}

#[test]
fn unassigned_count_strictly_decreases() {
    // tight threshold and tiny markers force orphans across iterations
    let mut doc = generate_synthetic(6, 8, 24, 9).with_constraint(Constraint::EdgeMove { threshold: 1.0 });
    for m in &mut doc.markers {
        let c = m.center();
        m.rect = Rect::new(c.x - 4, c.y - 4, c.x + 4, c.y + 4);
    }
    let out = run(&doc, &PipelineConfig::default());
    verify_clusterset(&out.clusters, &doc, 64, 32).unwrap();
    let counts: Vec<usize> = out.stats.iterations.iter().map(|it| it.unassigned).collect();
    assert!(counts.len() >= 2, "{counts:?}");
    assert!(counts.windows(2).all(|w| w[1] < w[0]), "{counts:?}");
    assert!(out.report.cluster_count > 6);
}

#[test]
fn identical_runs_are_identical() {
    let doc = generate_synthetic(5, 10, 12, 4).with_constraint(COSINE);
    let cfg = PipelineConfig {
        threads: Some(3),
        ..PipelineConfig::default()
    };
    assert_eq!(report_csv(&doc, &cfg), report_csv(&doc, &cfg));
}

#[test]
fn component_toggles_keep_cluster_counts() {
    let cases = [(EDGE, 0), (EDGE, 16), (COSINE, 0)];
    for (c, jitter) in cases {
        let doc = generate_synthetic(5, 10, jitter, 21).with_constraint(c);
        let base = run(&doc, &PipelineConfig::default()).report.cluster_count;
        let off = PipelineConfig {
            prescreen_enabled: false,
            ..PipelineConfig::default()
        };
        assert_eq!(
            run(&doc, &off).report.cluster_count,
            base,
            "prescreen toggle {c:?} jitter {jitter}"
        );
        let eager = PipelineConfig {
            solver: SolverKind::Eager,
            ..PipelineConfig::default()
        };
        assert_eq!(
            run(&doc, &eager).report.cluster_count,
            base,
            "solver toggle {c:?} jitter {jitter}"
        );
    }
    let doc = generate_synthetic(5, 10, 0, 21).with_constraint(COSINE);
    let mut fft = PipelineConfig::default();
    fft.iteration.aligner = AlignerKind::Fft;
    assert_eq!(run(&doc, &fft).report.cluster_count, 5);
}

#[test]
fn graph_is_independent_of_evaluation_order() {
    let SyntheticLayout { doc, .. } = generate_synthetic_labeled(4, 6, 8, 3);
    let doc = doc.with_constraint(EDGE);
    let patterns = extract_all(&doc);
    let views: Vec<AnchoredPattern> = patterns
        .iter()
        .cloned()
        .map(|p| AnchoredPattern::new(p, &EDGE, 64, 32))
        .collect();
    let cands = build_candidates(&patterns, &EDGE, &PrescreenConfig::default());
    let slack = RelaxedSlack { cosine: 0.0, edge: 2.5 };
    let forward = assemble(
        views.len(),
        &cands.pairs,
        &evaluate_pairs(&views, &cands.pairs, &EDGE, slack),
    );
    let reversed: Vec<(usize, usize)> = cands.pairs.iter().rev().map(|&(i, j)| (j, i)).collect();
    let backward = assemble(views.len(), &reversed, &evaluate_pairs(&views, &reversed, &EDGE, slack));
    assert_eq!(forward.node_count(), backward.node_count());
    for i in 0..forward.node_count() {
        assert_eq!(forward.neighbors(i), backward.neighbors(i));
        let survivors = cands.pairs.iter().filter(|&&(a, b)| a == i || b == i).count();
        assert!(forward.degree(i) <= survivors);
        for &j in forward.neighbors(i) {
            assert_eq!(forward.alignment(i, j), backward.alignment(i, j));
        }
    }
}

#[test]
fn candidate_sets_are_deterministic_and_sound() {
    let syn = generate_synthetic_labeled(6, 8, 0, 17);
    for c in [COSINE, EDGE] {
        let patterns = extract_all(&syn.doc);
        let a = build_candidates(&patterns, &c, &PrescreenConfig::default());
        let b = build_candidates(&patterns, &c, &PrescreenConfig::default());
        assert_eq!(a.pairs, b.pairs);
        for i in 0..patterns.len() {
            for j in (i + 1)..patterns.len() {
                if syn.template_of[i] == syn.template_of[j] {
                    assert!(a.pairs.binary_search(&(i, j)).is_ok(), "{c:?} dropped ({i}, {j})");
                }
            }
        }
    }
}
