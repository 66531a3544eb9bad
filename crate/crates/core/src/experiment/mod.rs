//! Experiment orchestration: configuration, the end-to-end pipeline,
//! Monte Carlo guarantee trials, parameter sweeps and report tables.

mod config;
mod guarantee;
mod pipeline;
mod report;
mod sweep;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub use config::{parse_sweep_values, DataSource, ExperimentConfig, SweepAxis, SweepSpec};
pub use guarantee::{
    monte_carlo, resplit, write_guarantee, CpTrial, GuaranteeReport, GuaranteeSettings, PathTrial, SummaryLine,
    TrialResult, MAX_INFEASIBLE_FRACTION, MIN_TRIALS, SUMMARY_HEADER, TRIALS_HEADER,
};
pub use pipeline::{
    calibrate_path, cp_baselines, evaluate, load_graph, prepare, refine, run_pipeline, write_cp_csv, write_outputs,
    write_sets_csv, PathResult, PipelineRun, PreparedData, ScoredData, CP_HEADER, DTCRC_LABEL, SETS_HEADER,
    SSGNC_LABEL,
};
pub use report::{collect_reports, render_table, write_report_csv};
pub use sweep::{apply_axis, run_sweep, write_sweep_csv, SweepCell, SweepRow, SWEEP_HEADER};

impl ExperimentConfig {
    pub fn guarantee_settings(&self) -> GuaranteeSettings {
        GuaranteeSettings {
            risk: self.risk,
            cp_alpha: self.cp_alpha,
            cp: self.cp,
            trials: self.trials,
            workers: self.workers,
            seed: self.seed,
        }
    }
}

/// Runs the scoring stages, then the Monte Carlo trials on every path.
pub fn run_guarantee(cfg: &ExperimentConfig) -> Result<GuaranteeReport> {
    let settings = cfg.guarantee_settings();
    if settings.trials < MIN_TRIALS {
        return Err(Error::InvalidConfig(format!(
            "trials = {} is below the minimum of {MIN_TRIALS}",
            settings.trials
        )));
    }
    let scored = refine(cfg, prepare(cfg)?)?;
    let paths: Vec<(String, &crate::detector::ScoreTable)> =
        scored.paths().into_iter().map(|(l, t)| (l.to_string(), t)).collect();
    monte_carlo(&paths, Some(&scored.base), &settings).map_err(|e| e.in_stage("guarantee"))
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn write_csv(path: &Path, header: &str, lines: impl Iterator<Item = String>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        for l in lines {
            writeln!(w, "{l}")?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}
