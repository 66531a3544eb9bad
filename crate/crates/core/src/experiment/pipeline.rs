//! Load or generate, split, detect or import, refine, calibrate, evaluate.
//!
//! Every stage wraps its errors with the stage name. All randomness flows
//! from the config seeds, so a rerun reproduces every artifact byte for
//! byte.

use std::path::Path;

use crate::conformal::{
    calibrate_dual, calibration_report, cp_calibrate_and_predict, predict_set, write_calibration_report, CpMethod,
    CpOutcome, DualThresholds, NodeClass, PredictionSet,
};
use crate::detector::{train_detector, ScoreTable};
use crate::error::{Error, Result};
use crate::experiment::config::{DataSource, ExperimentConfig};
use crate::experiment::create_dir;
use crate::graph::{generate_synthetic, read_graph, split_nodes, Graph, Split};
use crate::metrics::{
    evaluate_sets, neighborhood_inefficiency_entropy, reliability_diagram, write_entropy_csv, write_metrics_csv,
    write_reliability_csv, MetricsReport,
};
use crate::ssgnc::{calibrator_input, train_ssgnc, write_training_log, SsgncParams, SsgncRun};

pub const DTCRC_LABEL: &str = "DTCRC";
pub const SSGNC_LABEL: &str = "SSGNC+DTCRC";
pub const SETS_HEADER: &str = "node_id,label,p_anomaly,contains_normal,contains_anomaly";
pub const CP_HEADER: &str = "method,alpha,n_calib,qhat,trivial";

/// Graph and split-annotated base scores, before any refinement.
#[derive(Debug, Clone)]
pub struct PreparedData {
    /// `None` when scores were imported without a graph.
    pub graph: Option<Graph>,
    pub base: ScoreTable,
}

/// Score tables ready for calibration.
#[derive(Debug, Clone)]
pub struct ScoredData {
    pub graph: Option<Graph>,
    pub base: ScoreTable,
    pub refined: Option<SsgncRun>,
}

impl ScoredData {
    /// Each calibratable score table with its method label, base first.
    pub fn paths(&self) -> Vec<(&'static str, &ScoreTable)> {
        let mut out = vec![(DTCRC_LABEL, &self.base)];
        if let Some(run) = &self.refined {
            out.push((SSGNC_LABEL, &run.scores));
        }
        out
    }

    /// The table the final sets are built from.
    pub fn final_table(&self) -> &ScoreTable {
        self.refined.as_ref().map_or(&self.base, |r| &r.scores)
    }
}

/// Calibrated thresholds and Test-split metrics for one score path.
#[derive(Debug, Clone)]
pub struct PathResult {
    pub label: &'static str,
    pub thresholds: DualThresholds,
    /// Set for every row of the path's table, in row order.
    pub sets: Vec<PredictionSet>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub data: ScoredData,
    pub paths: Vec<PathResult>,
    pub cp: Vec<(CpOutcome, MetricsReport)>,
}

impl PipelineRun {
    /// `(method, report)` rows in the order they are written.
    pub fn metric_rows(&self) -> Vec<(String, MetricsReport)> {
        let cp = self.cp.iter().map(|(o, m)| (o.method.to_string(), *m));
        let ours = self.paths.iter().map(|p| (p.label.to_string(), p.metrics));
        cp.chain(ours).collect()
    }

    pub fn final_path(&self) -> &PathResult {
        self.paths.last().expect("at least the base path")
    }
}

pub fn load_graph(cfg: &ExperimentConfig) -> Result<Option<Graph>> {
    match &cfg.source {
        DataSource::Synthetic(s) => generate_synthetic(s, cfg.seed)
            .map(Some)
            .map_err(|e| e.in_stage("generate")),
        DataSource::Files { edges, nodes } => read_graph(edges, nodes).map(Some).map_err(|e| e.in_stage("load")),
        DataSource::Scores(_) => Ok(None),
    }
}

/// Stages up to base scores: load or generate, split, then train the
/// detector or import its scores.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    if let DataSource::Scores(path) = &cfg.source {
        let base = ScoreTable::import_csv(path).map_err(|e| e.in_stage("import"))?;
        return Ok(PreparedData { graph: None, base });
    }
    let g = load_graph(cfg)?.expect("graph source");
    let split = split_nodes(&g, cfg.ratios, cfg.effective_split_seed()).map_err(|e| e.in_stage("split"))?;
    let det = train_detector(&g, &split, &cfg.detector).map_err(|e| e.in_stage("detect"))?;
    Ok(PreparedData {
        graph: Some(g),
        base: det.scores,
    })
}

/// Trains the calibrator on top of prepared base scores when enabled.
pub fn refine(cfg: &ExperimentConfig, data: PreparedData) -> Result<ScoredData> {
    let refined = match (&data.graph, cfg.ssgnc_enabled) {
        (Some(g), true) => {
            let stage = |e: Error| e.in_stage("ssgnc");
            let x = calibrator_input(g, &data.base, cfg.ssgnc.use_detector_scores).map_err(stage)?;
            let split = crate::graph::NodeSplit {
                assignment: data.base.rows().iter().map(|r| r.split).collect(),
                seed: cfg.effective_split_seed(),
            };
            let params = SsgncParams::init(cfg.ssgnc, x.cols(), cfg.seed).map_err(stage)?;
            Some(train_ssgnc(g, &x, g.labels(), &split, params, &cfg.loss, &cfg.risk, cfg.seed).map_err(stage)?)
        }
        _ => None,
    };
    Ok(ScoredData {
        graph: data.graph,
        base: data.base,
        refined,
    })
}

fn test_filter(table: &ScoreTable) -> Vec<bool> {
    table.rows().iter().map(|r| r.split == Split::Test).collect()
}

fn labels_of(table: &ScoreTable) -> Vec<u8> {
    table.rows().iter().map(|r| r.label).collect()
}

/// Calibrates one score path on Calib and evaluates its sets on Test.
pub fn calibrate_path(label: &'static str, table: &ScoreTable, cfg: &ExperimentConfig) -> Result<PathResult> {
    let thresholds = calibrate_dual(table, &cfg.risk).map_err(|e| e.in_stage("calibrate"))?;
    let sets: Vec<PredictionSet> = table
        .rows()
        .iter()
        .map(|r| predict_set(r.p_anomaly, &thresholds))
        .collect();
    let metrics =
        evaluate_sets(&sets, &labels_of(table), Some(&test_filter(table))).map_err(|e| e.in_stage("evaluate"))?;
    Ok(PathResult {
        label,
        thresholds,
        sets,
        metrics,
    })
}

/// Split-conformal baselines on `table`, evaluated on its Test rows.
pub fn cp_baselines(table: &ScoreTable, cfg: &ExperimentConfig) -> Result<Vec<(CpOutcome, MetricsReport)>> {
    let labels = labels_of(table);
    let filter = test_filter(table);
    let index: std::collections::HashMap<usize, usize> =
        table.rows().iter().enumerate().map(|(i, r)| (r.node_id, i)).collect();
    CpMethod::ALL
        .iter()
        .map(|&m| {
            let out = cp_calibrate_and_predict(table, m, cfg.cp_alpha, &cfg.cp, cfg.seed)
                .map_err(|e| e.in_stage("calibrate"))?;
            let mut sets = vec![PredictionSet::EMPTY; table.len()];
            for &(node, s) in &out.sets {
                sets[index[&node]] = s;
            }
            let report = evaluate_sets(&sets, &labels, Some(&filter)).map_err(|e| e.in_stage("evaluate"))?;
            Ok((out, report))
        })
        .collect()
}

/// Calibration and evaluation on already scored data.
pub fn evaluate(cfg: &ExperimentConfig, data: ScoredData) -> Result<PipelineRun> {
    let paths = data
        .paths()
        .into_iter()
        .map(|(label, table)| calibrate_path(label, table, cfg))
        .collect::<Result<Vec<_>>>()?;
    let cp = cp_baselines(&data.base, cfg)?;
    Ok(PipelineRun { data, paths, cp })
}

/// The full pipeline without writing anything.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineRun> {
    let prepared = prepare(cfg)?;
    let scored = refine(cfg, prepared)?;
    evaluate(cfg, scored)
}

/// Test-row sets of a path: which labels each set contains.
pub fn write_sets_csv(path: &Path, table: &ScoreTable, sets: &[PredictionSet]) -> Result<()> {
    let lines = table
        .rows()
        .iter()
        .zip(sets)
        .filter(|(r, _)| r.split == Split::Test)
        .map(|(r, s)| {
            format!(
                "{},{},{},{},{}",
                r.node_id,
                r.label,
                r.p_anomaly,
                u8::from(s.contains(0)),
                u8::from(s.contains(1))
            )
        });
    super::write_csv(path, SETS_HEADER, lines)
}

pub fn write_cp_csv(path: &Path, alpha: f64, cp: &[(CpOutcome, MetricsReport)]) -> Result<()> {
    let lines = cp
        .iter()
        .map(|(o, _)| format!("{},{},{},{},{}", o.method, alpha, o.n_calib, o.qhat, o.is_trivial()));
    super::write_csv(path, CP_HEADER, lines)
}

/// Writes every pipeline artifact into `dir`.
pub fn write_outputs(run: &PipelineRun, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let stage = |e: Error| e.in_stage("write");
    create_dir(dir).map_err(stage)?;
    let data = &run.data;
    data.base.export_csv(&dir.join("scores_detector.csv")).map_err(stage)?;
    if let Some(r) = &data.refined {
        r.scores.export_csv(&dir.join("scores_ssgnc.csv")).map_err(stage)?;
        write_training_log(&dir.join("training_log.csv"), &r.log).map_err(stage)?;
        r.params.save_csv(&dir.join("checkpoint.csv")).map_err(stage)?;
    }
    for p in &run.paths {
        let table = if p.label == DTCRC_LABEL {
            &data.base
        } else {
            data.final_table()
        };
        let lines = calibration_report(table, &p.thresholds).map_err(stage)?;
        let suffix = if p.label == DTCRC_LABEL { "detector" } else { "ssgnc" };
        write_calibration_report(&dir.join(format!("calibration_{suffix}.csv")), &lines).map_err(stage)?;
        write_sets_csv(&dir.join(format!("sets_{suffix}.csv")), table, &p.sets).map_err(stage)?;
    }
    let fin = run.final_path();
    let fin_table = data.final_table();
    let lines = calibration_report(fin_table, &fin.thresholds).map_err(stage)?;
    write_calibration_report(&dir.join("calibration.csv"), &lines).map_err(stage)?;
    write_metrics_csv(&dir.join("metrics.csv"), &run.metric_rows()).map_err(stage)?;
    write_cp_csv(&dir.join("cp.csv"), cfg.cp_alpha, &run.cp).map_err(stage)?;
    for class in [NodeClass::Normal, NodeClass::Anomalous] {
        let bins = reliability_diagram(fin_table, class, cfg.reliability_bins, Some(Split::Test)).map_err(stage)?;
        write_reliability_csv(&dir.join(format!("reliability_{class}.csv")), class, &bins).map_err(stage)?;
    }
    if let Some(g) = &data.graph {
        let entropy = neighborhood_inefficiency_entropy(g, &fin.sets, cfg.neighborhood).map_err(stage)?;
        write_entropy_csv(&dir.join("entropy.csv"), &fin.sets, &entropy).map_err(stage)?;
    }
    Ok(())
}
