//! One full pipeline per value of a swept parameter.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::config::{ExperimentConfig, SweepAxis, SweepSpec};
use crate::experiment::pipeline::run_pipeline;

pub const SWEEP_HEADER: &str = "axis,value,method,status,set_fnr,set_fpr,singleton,inefficiency,error";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub set_fnr: Option<f64>,
    pub set_fpr: Option<f64>,
    pub singleton: f64,
    pub inefficiency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub value: f64,
    /// Rows for every calibrated path, or the error that stopped the cell.
    pub outcome: std::result::Result<Vec<SweepRow>, String>,
}

/// Config for one cell of the sweep.
pub fn apply_axis(cfg: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::Prototypes => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "prototype count {value} is not a positive integer"
                )));
            }
            c.ssgnc.prototypes = value as usize;
        }
        SweepAxis::Alpha => {
            c.risk.alpha_fnr = value;
            c.risk.alpha_fpr = value;
        }
    }
    c.validate()?;
    Ok(c)
}

fn run_cell(cfg: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<Vec<SweepRow>> {
    let c = apply_axis(cfg, axis, value)?;
    let run = run_pipeline(&c)?;
    Ok(run
        .paths
        .iter()
        .map(|p| SweepRow {
            method: p.label.to_string(),
            set_fnr: p.metrics.set_fnr,
            set_fpr: p.metrics.set_fpr,
            singleton: p.metrics.singleton_rate,
            inefficiency: p.metrics.inefficiency,
        })
        .collect())
}

/// Runs every cell; a failing cell is recorded and the sweep continues.
pub fn run_sweep(cfg: &ExperimentConfig, spec: &SweepSpec) -> Result<Vec<SweepCell>> {
    if spec.values.is_empty() {
        return Err(Error::InvalidConfig("sweep value list is empty".into()));
    }
    if spec.axis == SweepAxis::Prototypes && !cfg.ssgnc_enabled {
        return Err(Error::InvalidConfig(
            "a prototype sweep needs ssgnc.enabled = true".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    Ok(pool.install(|| {
        spec.values
            .par_iter()
            .map(|&value| SweepCell {
                value,
                outcome: run_cell(cfg, spec.axis, value).map_err(|e| e.to_string()),
            })
            .collect()
    }))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn write_sweep_csv(path: &Path, axis: SweepAxis, cells: &[SweepCell]) -> Result<()> {
    let mut lines = Vec::new();
    for c in cells {
        match &c.outcome {
            Ok(rows) => {
                for r in rows {
                    lines.push(format!(
                        "{axis},{},{},ok,{},{},{},{},",
                        c.value,
                        r.method,
                        opt(r.set_fnr),
                        opt(r.set_fpr),
                        r.singleton,
                        r.inefficiency
                    ));
                }
            }
            Err(msg) => {
                let clean = msg.replace([',', '\n'], ";");
                lines.push(format!("{axis},{},NA,error,NA,NA,NA,NA,{clean}", c.value));
            }
        }
    }
    super::write_csv(path, SWEEP_HEADER, lines.into_iter())
}
