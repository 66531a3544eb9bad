//! Monte Carlo check of the finite-sample risk guarantee.
//!
//! Train stays fixed, so the scores are fixed. Each trial pools the Calib
//! and Test rows, redraws a Calib set of the original size uniformly at
//! random, recalibrates and evaluates on the rest.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::conformal::{
    calibrate_dual, cp_calibrate_and_predict, predict_set, CpMethod, CpSettings, DualThresholds, RiskSpec,
};
use crate::detector::ScoreTable;
use crate::error::{Error, Result};
use crate::experiment::create_dir;
use crate::graph::Split;
use crate::rng::{derive_seed, stream};

pub const MIN_TRIALS: usize = 100;
/// Largest tolerated fraction of trials whose calibration is infeasible.
pub const MAX_INFEASIBLE_FRACTION: f64 = 0.01;

pub const TRIALS_HEADER: &str =
    "trial,method,status,lambda_normal,lambda_ano,qhat,coverage,inefficiency,singleton,set_fnr,set_fpr";
pub const SUMMARY_HEADER: &str = "method,quantity,target,trials,mean,std_error,sigma,lower,upper,status";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuaranteeSettings {
    pub risk: RiskSpec,
    pub cp_alpha: f64,
    pub cp: CpSettings,
    pub trials: usize,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
    pub seed: u64,
}

/// Outcome of one dual-threshold path in one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathTrial {
    pub thresholds: DualThresholds,
    pub n_test_normal: usize,
    pub n_test_ano: usize,
    pub coverage: f64,
    pub inefficiency: f64,
    pub singleton: f64,
    pub set_fnr: Option<f64>,
    pub set_fpr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpTrial {
    pub method: CpMethod,
    pub qhat: f64,
    pub n_test: usize,
    pub coverage: f64,
    pub inefficiency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    /// Per path, in input order; `Err` holds the infeasibility message.
    pub paths: Vec<std::result::Result<PathTrial, String>>,
    pub cp: Vec<CpTrial>,
}

/// One checked quantity of the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryLine {
    pub method: String,
    pub quantity: &'static str,
    /// `None` for informational rows.
    pub target: Option<f64>,
    pub trials: usize,
    pub mean: f64,
    pub std_error: f64,
    /// Larger of the binomial and empirical standard errors of the mean.
    pub sigma: f64,
    /// `None` for informational rows.
    pub bounds: Option<(f64, f64)>,
}

impl SummaryLine {
    /// `None` for informational rows.
    pub fn pass(&self) -> Option<bool> {
        self.bounds.map(|(lo, hi)| self.mean >= lo && self.mean <= hi)
    }

    pub fn status(&self) -> &'static str {
        match self.pass() {
            None => "INFO",
            Some(true) => "PASS",
            Some(false) => "FAIL",
        }
    }

    /// Human-readable comparison against the target.
    pub fn describe(&self) -> String {
        match self.bounds {
            Some((lo, hi)) => format!(
                "{} {} {}: mean {:.4} in [{:.4}, {:.4}] (target {}, sigma {:.4}, {} trials)",
                self.status(),
                self.method,
                self.quantity,
                self.mean,
                lo,
                hi,
                self.target.unwrap_or(f64::NAN),
                self.sigma,
                self.trials
            ),
            None => format!(
                "INFO {} {}: mean {:.4} ({} trials)",
                self.method, self.quantity, self.mean, self.trials
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuaranteeReport {
    pub labels: Vec<String>,
    pub trials: Vec<TrialResult>,
    pub summary: Vec<SummaryLine>,
}

impl GuaranteeReport {
    pub fn all_pass(&self) -> bool {
        self.summary.iter().all(|l| l.pass() != Some(false))
    }

    pub fn line(&self, method: &str, quantity: &str) -> Option<&SummaryLine> {
        self.summary
            .iter()
            .find(|l| l.method == method && l.quantity == quantity)
    }
}

/// Uniform redraw of Calib among the pooled non-Train rows, keeping the
/// Calib size.
pub fn resplit(table: &ScoreTable, seed: u64, trial: usize) -> Result<ScoreTable> {
    let mut pool: Vec<usize> = Vec::new();
    let mut n_calib = 0;
    for (i, r) in table.rows().iter().enumerate() {
        match r.split {
            Split::Train => {}
            Split::Calib => {
                n_calib += 1;
                pool.push(i);
            }
            Split::Test => pool.push(i),
        }
    }
    pool.shuffle(&mut stream(seed, &[0x6A, trial as u64]));
    let mut splits: Vec<Split> = table.rows().iter().map(|r| r.split).collect();
    for (pos, &i) in pool.iter().enumerate() {
        splits[i] = if pos < n_calib { Split::Calib } else { Split::Test };
    }
    table.with_splits(&splits)
}

fn evaluate_path(table: &ScoreTable, risk: &RiskSpec) -> Result<PathTrial> {
    let thresholds = calibrate_dual(table, risk)?;
    let (mut n0, mut n1, mut miss0, mut miss1, mut size, mut single) = (0usize, 0usize, 0usize, 0usize, 0usize, 0usize);
    for r in table.in_split(Split::Test) {
        let s = predict_set(r.p_anomaly, &thresholds);
        size += s.size();
        single += usize::from(s.size() == 1);
        if r.label == 1 {
            n1 += 1;
            miss1 += usize::from(!s.contains(1));
        } else {
            n0 += 1;
            miss0 += usize::from(!s.contains(0));
        }
    }
    let n = (n0 + n1).max(1) as f64;
    let rate = |m: usize, c: usize| (c > 0).then(|| m as f64 / c as f64);
    Ok(PathTrial {
        thresholds,
        n_test_normal: n0,
        n_test_ano: n1,
        coverage: 1.0 - (miss0 + miss1) as f64 / n,
        inefficiency: size as f64 / n,
        singleton: single as f64 / n,
        set_fnr: rate(miss1, n1),
        set_fpr: rate(miss0, n0),
    })
}

fn evaluate_cp(table: &ScoreTable, s: &GuaranteeSettings, trial: usize) -> Result<Vec<CpTrial>> {
    let labels: std::collections::HashMap<usize, u8> = table.rows().iter().map(|r| (r.node_id, r.label)).collect();
    CpMethod::ALL
        .iter()
        .map(|&method| {
            let out = cp_calibrate_and_predict(table, method, s.cp_alpha, &s.cp, derive_seed(s.seed, &[trial as u64]))?;
            let n = out.sets.len().max(1) as f64;
            let covered = out.sets.iter().filter(|(id, set)| set.contains(labels[id])).count();
            let size: usize = out.sets.iter().map(|(_, set)| set.size()).sum();
            Ok(CpTrial {
                method,
                qhat: out.qhat,
                n_test: out.sets.len(),
                coverage: covered as f64 / n,
                inefficiency: size as f64 / n,
            })
        })
        .collect()
}

fn is_infeasible(e: &Error) -> bool {
    matches!(e, Error::InsufficientCalibration { .. } | Error::MissingClass(_))
}

fn run_trial(
    paths: &[(String, &ScoreTable)],
    cp_table: Option<&ScoreTable>,
    s: &GuaranteeSettings,
    trial: usize,
) -> Result<TrialResult> {
    let path_results = paths
        .iter()
        .map(|(_, t)| {
            let t = resplit(t, s.seed, trial)?;
            match evaluate_path(&t, &s.risk) {
                Ok(p) => Ok(Ok(p)),
                Err(e) if is_infeasible(&e) => Ok(Err(e.to_string())),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let cp = match cp_table {
        Some(t) => evaluate_cp(&resplit(t, s.seed, trial)?, s, trial)?,
        None => Vec::new(),
    };
    Ok(TrialResult {
        trial,
        paths: path_results,
        cp,
    })
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn mean_usize(xs: impl Iterator<Item = usize>) -> f64 {
    let (sum, k) = xs.fold((0usize, 0usize), |(s, k), x| (s + x, k + 1));
    sum as f64 / k.max(1) as f64
}

/// Mean risk must sit in `[α − (B − α)/n_calib − 3σ, α + 3σ]`, where σ is
/// the Monte Carlo standard error of the mean.
fn risk_line(
    method: &str,
    quantity: &'static str,
    values: &[f64],
    alpha: f64,
    bound: f64,
    n_calib: f64,
    n_test: f64,
) -> SummaryLine {
    let (mean, se) = mean_and_se(values);
    let binomial = (alpha * (1.0 - alpha) / (n_test * values.len() as f64)).sqrt();
    let sigma = binomial.max(se);
    SummaryLine {
        method: method.to_string(),
        quantity,
        target: Some(alpha),
        trials: values.len(),
        mean,
        std_error: se,
        sigma,
        bounds: Some((alpha - (bound - alpha) / n_calib - 3.0 * sigma, alpha + 3.0 * sigma)),
    }
}

fn info_line(method: &str, quantity: &'static str, values: &[f64]) -> SummaryLine {
    let (mean, se) = mean_and_se(values);
    SummaryLine {
        method: method.to_string(),
        quantity,
        target: None,
        trials: values.len(),
        mean,
        std_error: se,
        sigma: se,
        bounds: None,
    }
}

fn summarize(labels: &[String], trials: &[TrialResult], s: &GuaranteeSettings) -> Vec<SummaryLine> {
    let mut out = Vec::new();
    for (p, label) in labels.iter().enumerate() {
        let ok: Vec<&PathTrial> = trials.iter().filter_map(|t| t.paths[p].as_ref().ok()).collect();
        if ok.is_empty() {
            continue;
        }
        let fnr: Vec<f64> = ok.iter().filter_map(|t| t.set_fnr).collect();
        let fpr: Vec<f64> = ok.iter().filter_map(|t| t.set_fpr).collect();
        let n_ano = mean_usize(ok.iter().map(|t| t.thresholds.n_ano));
        let n_normal = mean_usize(ok.iter().map(|t| t.thresholds.n_normal));
        let t_ano = mean_usize(ok.iter().map(|t| t.n_test_ano));
        let t_normal = mean_usize(ok.iter().map(|t| t.n_test_normal));
        if !fnr.is_empty() {
            out.push(risk_line(
                label,
                "set_fnr",
                &fnr,
                s.risk.alpha_fnr,
                s.risk.bound,
                n_ano,
                t_ano,
            ));
        }
        if !fpr.is_empty() {
            out.push(risk_line(
                label,
                "set_fpr",
                &fpr,
                s.risk.alpha_fpr,
                s.risk.bound,
                n_normal,
                t_normal,
            ));
        }
        let col = |f: fn(&PathTrial) -> f64| ok.iter().map(|t| f(t)).collect::<Vec<f64>>();
        out.push(info_line(label, "singleton", &col(|t| t.singleton)));
        out.push(info_line(label, "inefficiency", &col(|t| t.inefficiency)));
    }
    for (m, method) in CpMethod::ALL.iter().enumerate() {
        let rows: Vec<&CpTrial> = trials.iter().filter_map(|t| t.cp.get(m)).collect();
        if rows.is_empty() {
            continue;
        }
        let cov: Vec<f64> = rows.iter().map(|c| c.coverage).collect();
        let (mean, se) = mean_and_se(&cov);
        let a = s.cp_alpha;
        let n_test = mean_usize(rows.iter().map(|c| c.n_test));
        let sigma = (a * (1.0 - a) / (n_test * cov.len() as f64)).sqrt().max(se);
        out.push(SummaryLine {
            method: method.to_string(),
            quantity: "coverage",
            target: Some(1.0 - a),
            trials: cov.len(),
            mean,
            std_error: se,
            sigma,
            bounds: Some((1.0 - a - 3.0 * sigma, 1.0)),
        });
        let ine: Vec<f64> = rows.iter().map(|c| c.inefficiency).collect();
        out.push(info_line(&method.to_string(), "inefficiency", &ine));
    }
    out
}

/// Runs `settings.trials` re-splits of every labelled path; split-conformal
/// baselines run on `cp_table` when given.
pub fn monte_carlo(
    paths: &[(String, &ScoreTable)],
    cp_table: Option<&ScoreTable>,
    settings: &GuaranteeSettings,
) -> Result<GuaranteeReport> {
    if settings.trials < MIN_TRIALS {
        return Err(Error::InvalidConfig(format!(
            "trials = {} is below the minimum of {MIN_TRIALS}",
            settings.trials
        )));
    }
    settings.risk.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let trials: Vec<TrialResult> = pool.install(|| {
        (0..settings.trials)
            .into_par_iter()
            .map(|t| run_trial(paths, cp_table, settings, t))
            .collect::<Result<Vec<_>>>()
    })?;
    for (p, (label, _)) in paths.iter().enumerate() {
        let failed: Vec<&String> = trials.iter().filter_map(|t| t.paths[p].as_ref().err()).collect();
        if failed.len() as f64 > MAX_INFEASIBLE_FRACTION * settings.trials as f64 {
            return Err(Error::InfeasibleSplit(format!(
                "{label}: calibration infeasible in {} of {} trials (first: {})",
                failed.len(),
                settings.trials,
                failed[0]
            )));
        }
    }
    let labels: Vec<String> = paths.iter().map(|(l, _)| l.clone()).collect();
    let summary = summarize(&labels, &trials, settings);
    Ok(GuaranteeReport {
        labels,
        trials,
        summary,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn write_guarantee(report: &GuaranteeReport, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let mut trial_lines = Vec::new();
    for t in &report.trials {
        for (label, p) in report.labels.iter().zip(&t.paths) {
            trial_lines.push(match p {
                Ok(p) => format!(
                    "{},{label},ok,{},{},NA,{},{},{},{},{}",
                    t.trial,
                    p.thresholds.lambda_normal,
                    p.thresholds.lambda_ano,
                    p.coverage,
                    p.inefficiency,
                    p.singleton,
                    opt(p.set_fnr),
                    opt(p.set_fpr)
                ),
                Err(_) => format!("{},{label},infeasible,NA,NA,NA,NA,NA,NA,NA,NA", t.trial),
            });
        }
        for c in &t.cp {
            trial_lines.push(format!(
                "{},{},ok,NA,NA,{},{},{},NA,NA,NA",
                t.trial, c.method, c.qhat, c.coverage, c.inefficiency
            ));
        }
    }
    super::write_csv(
        &dir.join("guarantee_trials.csv"),
        TRIALS_HEADER,
        trial_lines.into_iter(),
    )?;
    let summary_lines = report.summary.iter().map(|l| {
        let (lo, hi) = l.bounds.map_or((None, None), |(a, b)| (Some(a), Some(b)));
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            l.method,
            l.quantity,
            opt(l.target),
            l.trials,
            l.mean,
            l.std_error,
            l.sigma,
            opt(lo),
            opt(hi),
            l.status()
        )
    });
    super::write_csv(&dir.join("guarantee_summary.csv"), SUMMARY_HEADER, summary_lines)
}
