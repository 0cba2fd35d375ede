use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pattern_forge::bench::{parse_matrix, render_csv, render_table, run_matrix};
use pattern_forge::layout_io::{
    generate_synthetic, parse_layout, write_layout, write_report, Constraint, ConstraintKind,
};
use pattern_forge::pipeline::{run, verify_clusterset, AlignerKind, PipelineConfig, RunStats, SolverKind};

#[derive(Parser)]
#[command(name = "pattern-forge", version, about = "Layout pattern clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstraintArg {
    Cosine,
    Edgemove,
}

impl From<ConstraintArg> for ConstraintKind {
    fn from(c: ConstraintArg) -> Self {
        match c {
            ConstraintArg::Cosine => ConstraintKind::Cosine,
            ConstraintArg::Edgemove => ConstraintKind::EdgeMove,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlignerArg {
    Fft,
    Geo,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Lazy,
    Eager,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster the markers of a layout file.
    Cluster {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Overrides the constraint in the layout header.
        #[arg(long, value_enum)]
        constraint: Option<ConstraintArg>,
        /// Overrides the threshold in the layout header.
        #[arg(long)]
        threshold: Option<f64>,
        /// Overrides the pattern radius in the layout header (nm).
        #[arg(long)]
        radius: Option<i64>,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long, default_value_t = 32)]
        dct_k: usize,
        #[arg(long, value_enum, default_value_t = AlignerArg::Geo)]
        aligner: AlignerArg,
        #[arg(long, value_enum, default_value_t = SolverArg::Lazy)]
        solver: SolverArg,
        #[arg(long, default_value_t = 3)]
        max_iters: usize,
        #[arg(long)]
        threads: Option<usize>,
        /// Recorded in the run report; clustering itself is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes run statistics as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Writes `i j dx dy` similarity edges (marker indices) per iteration.
        #[arg(long)]
        dump_graph: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        prescreen_slack: f64,
        #[arg(long, default_value_t = 8)]
        quantum: i64,
        /// Re-checks every cluster independently before writing.
        #[arg(long)]
        verify: bool,
    },
    /// Run an ablation matrix over synthetic layouts.
    Bench {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write a synthetic layout.
    Generate {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 20)]
        templates: usize,
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        jitter: i64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ConstraintArg::Cosine)]
        constraint: ConstraintArg,
        #[arg(long, default_value_t = 0.95)]
        threshold: f64,
    },
}

#[derive(Serialize)]
struct RunReport<'a> {
    input: String,
    seed: u64,
    config: &'a PipelineConfig,
    stats: &'a RunStats,
}

fn constraint_of(kind: ConstraintKind, threshold: f64) -> Result<Constraint> {
    if !threshold.is_finite() || threshold < 0.0 {
        bail!("threshold must be a non-negative number, got {threshold}");
    }
    Ok(match kind {
        ConstraintKind::Cosine if threshold > 1.0 => bail!("cosine threshold must lie in [0, 1], got {threshold}"),
        ConstraintKind::Cosine => Constraint::Cosine { threshold },
        ConstraintKind::EdgeMove => Constraint::EdgeMove { threshold },
    })
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Cluster {
            input,
            output,
            constraint,
            threshold,
            radius,
            grid,
            dct_k,
            aligner,
            solver,
            max_iters,
            threads,
            seed,
            report,
            dump_graph,
            prescreen_slack,
            quantum,
            verify,
        } => {
            let bytes = fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let mut doc = parse_layout(&bytes).with_context(|| format!("parsing {}", input.display()))?;
            let kind = constraint.map_or(doc.constraint_kind, ConstraintKind::from);
            let c = constraint_of(kind, threshold.unwrap_or(doc.threshold))?;
            doc = doc.with_constraint(c);
            if let Some(r) = radius {
                if r <= 0 {
                    bail!("radius must be positive");
                }
                doc.pattern_radius = r;
            }
            if grid < 2 || dct_k == 0 || dct_k > grid {
                bail!("need grid >= 2 and 1 <= dct-k <= grid");
            }
            if quantum <= 0 {
                bail!("quantum must be positive");
            }
            let mut cfg = PipelineConfig {
                grid,
                dct_k,
                solver: match solver {
                    SolverArg::Lazy => SolverKind::Lazy,
                    SolverArg::Eager => SolverKind::Eager,
                },
                threads,
                keep_graphs: dump_graph.is_some(),
                ..PipelineConfig::default()
            };
            cfg.iteration.max_iterations = max_iters.max(1);
            cfg.iteration.aligner = match aligner {
                AlignerArg::Fft => AlignerKind::Fft,
                AlignerArg::Geo => AlignerKind::Geo,
            };
            cfg.prescreen.cosine_slack = prescreen_slack;
            cfg.prescreen.quantum = quantum;

            let outcome = run(&doc, &cfg);
            if verify {
                verify_clusterset(&outcome.clusters, &doc, grid, dct_k).context("cluster verification failed")?;
            }
            let mut out =
                BufWriter::new(fs::File::create(&output).with_context(|| format!("creating {}", output.display()))?);
            write_report(&outcome.report, &doc.markers, &mut out)?;
            out.flush()?;

            if let Some(path) = dump_graph {
                let mut g = BufWriter::new(fs::File::create(&path)?);
                for (k, ig) in outcome.graphs.iter().enumerate() {
                    writeln!(g, "# iteration {k}")?;
                    ig.dump(&mut g)?;
                }
                g.flush()?;
            }
            if let Some(path) = report {
                let r = RunReport {
                    input: input.display().to_string(),
                    seed,
                    config: &cfg,
                    stats: &outcome.stats,
                };
                fs::write(&path, serde_json::to_string_pretty(&r)?)?;
            }
            eprintln!(
                "{} markers -> {} clusters in {} iteration(s), compression {:.4}",
                doc.markers.len(),
                outcome.report.cluster_count,
                outcome.report.iterations_used,
                outcome.report.compression_ratio
            );
        }
        Command::Bench { matrix, out, threads } => {
            let text = fs::read_to_string(&matrix).with_context(|| format!("reading {}", matrix.display()))?;
            let scenarios = parse_matrix(&text)?;
            let cfg = PipelineConfig {
                threads,
                ..PipelineConfig::default()
            };
            let records = run_matrix(&scenarios, &cfg);
            fs::create_dir_all(&out)?;
            fs::write(out.join("bench.csv"), render_csv(&records))?;
            fs::write(out.join("bench.json"), serde_json::to_string_pretty(&records)?)?;
            let table = render_table(&records);
            fs::write(out.join("bench.txt"), &table)?;
            print!("{table}");
        }
        Command::Generate {
            output,
            templates,
            instances,
            jitter,
            seed,
            constraint,
            threshold,
        } => {
            if templates == 0 || instances == 0 || jitter < 0 {
                bail!("templates and instances must be positive and jitter non-negative");
            }
            let doc = generate_synthetic(templates, instances, jitter, seed)
                .with_constraint(constraint_of(constraint.into(), threshold)?);
            let mut out = BufWriter::new(fs::File::create(&output)?);
            write_layout(&doc, &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}
