use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::conformal::{calibrate_dual_scores, predict_set, DualThresholds, PredictionSet, RiskSpec};
use crate::detector::{class_weights, ScoreTable};
use crate::error::{Error, Result};
use crate::graph::{normalized_laplacian, Graph, NodeSplit, Split};
use crate::metrics::evaluate_sets;
use crate::rng::stream;
use crate::ssgnc::layers::{filter_operator, ssgnc_forward, update_prototypes};
use crate::ssgnc::loss::hybrid_loss;
use crate::ssgnc::{HybridLossSpec, SsgncParams};
use crate::tensor::{adam_step, dropout_mask, AdamConfig, AdamState, SparseMatrix, Tape, Tensor, Var};

pub const TRAINING_LOG_HEADER: &str = "epoch,wce,size_loss,total,internal_fnr,internal_fpr,singleton";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub wce: f64,
    pub size_loss: f64,
    pub total: f64,
    pub internal_fnr: Option<f64>,
    pub internal_fpr: Option<f64>,
    pub singleton: f64,
}

#[derive(Debug, Clone)]
pub struct SsgncRun {
    pub params: SsgncParams,
    /// Refined probabilities for every node, with the outer split.
    pub scores: ScoreTable,
    pub log: Vec<EpochLog>,
    /// Thresholds last frozen into the size term.
    pub internal_thresholds: DualThresholds,
}

/// Per-class random carve of `train` into `(fit, fold)`.
fn carve_fold(train: &[usize], labels: &[u8], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut fit = Vec::new();
    let mut fold = Vec::new();
    for class in 0..=1u8 {
        let mut members: Vec<usize> = train.iter().copied().filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut stream(seed, &[0x55, 2, u64::from(class)]));
        let n_fold = (fraction * members.len() as f64).round() as usize;
        if n_fold == 0 || n_fold >= members.len() {
            return Err(Error::InfeasibleSplit(format!(
                "internal fold: class {class} has {} train nodes, cannot hold out {fraction}",
                members.len()
            )));
        }
        fold.extend_from_slice(&members[..n_fold]);
        fit.extend_from_slice(&members[n_fold..]);
    }
    fit.sort_unstable();
    fold.sort_unstable();
    Ok((fit, fold))
}

fn calibrate_fold(probs: &Tensor, labels: &[u8], fold: &[usize], risk: &RiskSpec) -> Result<DualThresholds> {
    let p: Vec<f64> = fold.iter().map(|&i| probs.get(i, 1)).collect();
    let y: Vec<u8> = fold.iter().map(|&i| labels[i]).collect();
    calibrate_dual_scores(&p, &y, risk).map_err(|e| e.in_stage("internal calibration"))
}

/// Fold inefficiency under thresholds calibrated on the fold itself;
/// `None` when the fold cannot support calibration.
fn fold_inefficiency(probs: &Tensor, labels: &[u8], fold: &[usize], risk: &RiskSpec) -> Option<f64> {
    let t = calibrate_fold(probs, labels, fold, risk).ok()?;
    let total: usize = fold.iter().map(|&i| predict_set(probs.get(i, 1), &t).size()).sum();
    Some(total as f64 / fold.len() as f64)
}

fn keep_if_better(best: &mut Option<(f64, SsgncParams)>, score: Option<f64>, params: &SsgncParams) {
    if let Some(s) = score {
        if best.as_ref().is_none_or(|(b, _)| s < *b) {
            *best = Some((s, params.clone()));
        }
    }
}

fn eval_probs(lap: &Arc<SparseMatrix>, x: &Tensor, params: &SsgncParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars: Vec<Var> = params
        .store
        .tensors()
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let pass = ssgnc_forward(&mut tape, lap, xv, params, &vars, None)?;
    Ok(tape.value(pass.probs).clone())
}

fn tag_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("calibrator epoch {epoch}: {context}"),
        },
        other => other,
    }
}

/// Trains the calibrator on Train nodes only.
///
/// A stratified fold carved from Train supplies the thresholds frozen into
/// the size term; they are recalibrated every `refresh_every` epochs.
/// Labels outside Train are never read.
#[allow(clippy::too_many_arguments)]
pub fn train_ssgnc(
    g: &Graph,
    x_input: &Tensor,
    labels: &[u8],
    split: &NodeSplit,
    params_init: SsgncParams,
    loss_spec: &HybridLossSpec,
    risk: &RiskSpec,
    seed: u64,
) -> Result<SsgncRun> {
    loss_spec.validate()?;
    let n = g.num_nodes();
    if x_input.rows() != n || labels.len() != n || split.len() != n {
        return Err(Error::shape("train_ssgnc", "inputs must have one row per node"));
    }
    if x_input.cols() != params_init.d_in {
        return Err(Error::shape(
            "train_ssgnc",
            format!(
                "input has {} columns, parameters expect {}",
                x_input.cols(),
                params_init.d_in
            ),
        ));
    }
    let cfg = params_init.config;
    let train = split.indices(Split::Train);
    let (fit, fold) = carve_fold(&train, labels, cfg.internal_fraction, seed)?;
    let weights = match loss_spec.class_weights {
        Some(w) => w,
        None => class_weights(labels, &fit)?,
    };
    let lap = Arc::new(filter_operator(normalized_laplacian(g), cfg.rescale_spectrum));
    let fold_filter: Vec<bool> = {
        let mut f = vec![false; n];
        fold.iter().for_each(|&i| f[i] = true);
        f
    };
    // Non-fold entries are placeholders; only fold rows are evaluated.
    let fold_labels: Vec<u8> = (0..n).map(|i| if fold_filter[i] { labels[i] } else { 0 }).collect();

    let mut params = params_init;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(params.store.tensors());
    let mut thresholds = calibrate_fold(&eval_probs(&lap, x_input, &params)?, labels, &fold, risk)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, SsgncParams)> = None;

    for epoch in 0..cfg.epochs {
        if epoch > 0 && epoch % loss_spec.refresh_every == 0 {
            thresholds = calibrate_fold(&eval_probs(&lap, x_input, &params)?, labels, &fold, risk)?;
        }
        let masks: Option<Vec<Tensor>> = (cfg.dropout > 0.0).then(|| {
            (0..cfg.layers)
                .map(|l| {
                    let mut rng = stream(seed, &[0x55, 3, epoch as u64, l as u64]);
                    dropout_mask(n, cfg.hidden, cfg.dropout, &mut rng)
                })
                .collect()
        });
        let mut tape = Tape::new();
        let xv = tape.constant(x_input.clone());
        let vars = params.store.attach(&mut tape);
        let (pass, loss) = (|| {
            let pass = ssgnc_forward(&mut tape, &lap, xv, &params, &vars, masks.as_deref())?;
            let loss = hybrid_loss(&mut tape, pass.probs, labels, &fit, weights, &thresholds, loss_spec)?;
            Ok((pass, loss))
        })()
        .map_err(|e| tag_epoch(e, epoch))?;

        let probs = if masks.is_none() {
            tape.value(pass.probs).clone()
        } else {
            eval_probs(&lap, x_input, &params)?
        };
        if cfg.select_best {
            keep_if_better(&mut best, fold_inefficiency(&probs, labels, &fold, risk), &params);
        }
        let sets: Vec<PredictionSet> = (0..n)
            .map(|i| {
                if fold_filter[i] {
                    predict_set(probs.get(i, 1), &thresholds)
                } else {
                    PredictionSet::BOTH
                }
            })
            .collect();
        let report = evaluate_sets(&sets, &fold_labels, Some(&fold_filter))?;
        log.push(EpochLog {
            epoch,
            wce: tape.scalar(loss.wce),
            size_loss: tape.scalar(loss.size),
            total: tape.scalar(loss.total),
            internal_fnr: report.set_fnr,
            internal_fpr: report.set_fpr,
            singleton: report.singleton_rate,
        });

        let grads = tape.backward(loss.total)?;
        let mut grads: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();
        if cfg.weight_decay > 0.0 {
            for (g, p) in grads.iter_mut().zip(params.store.tensors()) {
                if p.rows() > 1 {
                    *g = g.zip_map(p, |gv, pv| gv + cfg.weight_decay * pv);
                }
            }
        }
        adam_step(params.store.tensors_mut(), &grads, &mut state, &adam)?;
        for (c, c_t) in params.prototypes.iter_mut().zip(&pass.c_t) {
            *c = update_prototypes(c, c_t, cfg.beta)?;
        }
        if !params.store.tensors().iter().all(Tensor::is_finite) {
            return Err(Error::NonFinite {
                context: format!("calibrator epoch {epoch}: parameter update"),
            });
        }
    }

    let mut probs = eval_probs(&lap, x_input, &params)?;
    if cfg.select_best {
        keep_if_better(&mut best, fold_inefficiency(&probs, labels, &fold, risk), &params);
        if let Some((_, chosen)) = best {
            params = chosen;
            probs = eval_probs(&lap, x_input, &params)?;
        }
    }
    let scores = ScoreTable::from_probs(&probs, labels, split)?;
    Ok(SsgncRun {
        params,
        scores,
        log,
        internal_thresholds: thresholds,
    })
}

/// Node features, optionally followed by the base detector's two
/// probability columns.
pub fn calibrator_input(g: &Graph, base: &ScoreTable, use_detector_scores: bool) -> Result<Tensor> {
    let x = g.features();
    if !use_detector_scores {
        return Ok(x.clone());
    }
    if base.len() != g.num_nodes() {
        return Err(Error::shape("calibrator_input", "score table must cover every node"));
    }
    let d = x.cols();
    let mut out = Tensor::zeros(x.rows(), d + 2);
    for (i, r) in base.rows().iter().enumerate() {
        if r.node_id != i {
            return Err(Error::shape("calibrator_input", "score rows must be in node order"));
        }
        out.row_mut(i)[..d].copy_from_slice(x.row(i));
        out.row_mut(i)[d] = r.p_normal;
        out.row_mut(i)[d + 1] = r.p_anomaly;
    }
    Ok(out)
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    (|| -> std::io::Result<()> {
        writeln!(w, "{TRAINING_LOG_HEADER}")?;
        for e in log {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                e.epoch,
                e.wce,
                e.size_loss,
                e.total,
                opt(e.internal_fnr),
                opt(e.internal_fpr),
                e.singleton
            )?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}
