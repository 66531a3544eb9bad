//! `riskset` command-line entry point.
//!
//! Exit codes: 0 success, 1 numeric failure, 2 configuration or I/O
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use riskset::experiment::{
    collect_reports, evaluate, load_graph, parse_sweep_values, prepare, refine, render_table, run_guarantee, run_sweep,
    write_guarantee, write_outputs, write_report_csv, write_sweep_csv, DataSource, ExperimentConfig, SweepAxis,
    SweepSpec, MIN_TRIALS,
};
use riskset::graph::{write_edge_list, write_node_table};
use riskset::Error;

#[derive(Parser)]
#[command(
    name = "riskset",
    version,
    about = "Risk-controlled prediction sets for graph anomaly detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config (`section.key = value` lines); defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `experiment.output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `experiment.trials`.
    #[arg(long)]
    trials: Option<usize>,
    /// Overrides `experiment.workers`; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic graph as `edges.tsv` and `nodes.csv`.
    Gen(Common),
    /// Train the base detector and export its scores.
    Detect(Common),
    /// Calibrate imported scores (`data.source = scores`) and evaluate sets.
    Calibrate(Common),
    /// Detect, refine, calibrate and evaluate, writing every artifact.
    Pipeline(Common),
    /// Monte Carlo re-splits checking the risk guarantee.
    Guarantee(Common),
    /// One pipeline per value of a parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `prototypes` or `alpha`; overrides `sweep.axis`.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values; overrides `sweep.values`.
        #[arg(long)]
        values: Option<String>,
    },
    /// Concatenate metrics files into one comparison table.
    Report {
        /// Metrics CSV files to combine.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Where to write the combined CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &c.out {
        cfg.output = out.clone();
    }
    if let Some(t) = c.trials {
        cfg.trials = t;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.output).map_err(|e| Error::Io {
        path: cfg.output.clone(),
        source: e,
    })?;
    Ok(&cfg.output)
}

fn cmd_gen(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    if !matches!(cfg.source, DataSource::Synthetic(_)) {
        bail!(Error::InvalidConfig("gen needs data.source = synthetic".into()));
    }
    let g = load_graph(&cfg)?.context("synthetic source yields a graph")?;
    let dir = out_dir(&cfg)?;
    write_edge_list(&dir.join("edges.tsv"), &g.edges())?;
    write_node_table(&dir.join("nodes.csv"), &g)?;
    println!(
        "wrote {} nodes, {} edges, {} anomalies to {}",
        g.num_nodes(),
        g.num_edges(),
        g.labels().iter().filter(|&&y| y == 1).count(),
        dir.display()
    );
    Ok(())
}

fn cmd_detect(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    if matches!(cfg.source, DataSource::Scores(_)) {
        bail!(Error::InvalidConfig("detect needs a graph source".into()));
    }
    let data = prepare(&cfg)?;
    let path = out_dir(&cfg)?.join("scores_detector.csv");
    data.base.export_csv(&path)?;
    let p: Vec<f64> = data.base.anomaly_column();
    let y: Vec<u8> = data.base.rows().iter().map(|r| r.label).collect();
    if let Some(auc) = riskset::metrics::roc_auc(&p, &y) {
        println!("detector AUC (all nodes) {auc:.4}");
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_pipeline(c: &Common, calibrate_only: bool) -> Result<()> {
    let mut cfg = load_config(c)?;
    if calibrate_only {
        if !matches!(cfg.source, DataSource::Scores(_)) {
            bail!(Error::InvalidConfig("calibrate needs data.source = scores".into()));
        }
        cfg.ssgnc_enabled = false;
    }
    let scored = refine(&cfg, prepare(&cfg)?)?;
    let run = evaluate(&cfg, scored)?;
    let dir = out_dir(&cfg)?;
    write_outputs(&run, &cfg, dir)?;
    for p in &run.paths {
        println!(
            "{}: lambda_normal {:.6}, lambda_ano {:.6}",
            p.label, p.thresholds.lambda_normal, p.thresholds.lambda_ano
        );
    }
    let lines: Vec<_> = run
        .metric_rows()
        .into_iter()
        .map(|(m, r)| {
            (
                m,
                [
                    Some(r.coverage),
                    Some(r.inefficiency),
                    Some(r.ambiguity),
                    Some(r.singleton_rate),
                    r.set_fnr,
                    r.set_fpr,
                ],
            )
        })
        .collect();
    print!("{}", render_table(&lines));
    println!("wrote artifacts to {}", dir.display());
    Ok(())
}

fn cmd_guarantee(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    if cfg.trials < MIN_TRIALS {
        eprintln!(
            "warning: {} trials is below the minimum of {MIN_TRIALS}; refusing to run",
            cfg.trials
        );
    }
    let report = run_guarantee(&cfg)?;
    let dir = out_dir(&cfg)?;
    write_guarantee(&report, dir)?;
    for line in &report.summary {
        println!("{}", line.describe());
    }
    println!(
        "wrote guarantee_trials.csv and guarantee_summary.csv to {}",
        dir.display()
    );
    Ok(())
}

fn cmd_sweep(c: &Common, axis: Option<&str>, values: Option<&str>) -> Result<()> {
    let cfg = load_config(c)?;
    let mut spec = cfg.sweep.clone();
    if axis.is_some() || values.is_some() {
        let axis: SweepAxis = match (axis, &spec) {
            (Some(a), _) => a.parse().map_err(Error::InvalidConfig)?,
            (None, Some(s)) => s.axis,
            (None, None) => bail!(Error::InvalidConfig("--values needs --axis or sweep.axis".into())),
        };
        let values = match (values, &spec) {
            (Some(v), _) => parse_sweep_values(v).map_err(Error::InvalidConfig)?,
            (None, Some(s)) => s.values.clone(),
            (None, None) => bail!(Error::InvalidConfig("--axis needs --values or sweep.values".into())),
        };
        spec = Some(SweepSpec { axis, values });
    }
    let Some(spec) = spec else {
        bail!(Error::InvalidConfig(
            "no sweep given: set sweep.axis and sweep.values or pass --axis/--values".into()
        ));
    };
    let cells = run_sweep(&cfg, &spec)?;
    let path = out_dir(&cfg)?.join("sweep.csv");
    write_sweep_csv(&path, spec.axis, &cells)?;
    for cell in &cells {
        match &cell.outcome {
            Ok(rows) => {
                for r in rows {
                    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".into(), |x| format!("{x:.4}"));
                    println!(
                        "{}={} {}: FNR {} FPR {} singleton {:.4}",
                        spec.axis,
                        cell.value,
                        r.method,
                        fmt(r.set_fnr),
                        fmt(r.set_fpr),
                        r.singleton
                    );
                }
            }
            Err(msg) => println!("{}={} failed: {msg}", spec.axis, cell.value),
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_report(inputs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let lines = collect_reports(inputs)?;
    print!("{}", render_table(&lines));
    if let Some(path) = out {
        write_report_csv(path, &lines)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(c) => cmd_gen(c),
        Command::Detect(c) => cmd_detect(c),
        Command::Calibrate(c) => cmd_pipeline(c, true),
        Command::Pipeline(c) => cmd_pipeline(c, false),
        Command::Guarantee(c) => cmd_guarantee(c),
        Command::Sweep { common, axis, values } => cmd_sweep(common, axis.as_deref(), values.as_deref()),
        Command::Report { inputs, out } => cmd_report(inputs, out.as_deref()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
