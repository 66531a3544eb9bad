//! Two-layer graph convolution detector with a softmax head.
//!
//! `P = D̃^{-1/2}(A+I)D̃^{-1/2}`, `H = relu(P X W₁ + b₁)`,
//! `probs = softmax(P H W₂ + b₂)`. Trained full-batch with Adam on the
//! weighted cross-entropy of Train nodes only.

use std::sync::Arc;

use crate::detector::{class_weights, ScoreTable};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeSplit, Split};
use crate::rng::stream;
use crate::tensor::{adam_step, dropout_mask, AdamConfig, AdamState, ParamStore, SparseMatrix, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorHyper {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for DetectorHyper {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 100,
            lr: 0.01,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl DetectorHyper {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(
                "detector hidden and epochs must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("detector lr = {} must be > 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "detector dropout = {} outside [0,1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedDetector {
    pub params: ParamStore,
    pub scores: ScoreTable,
}

/// Records the forward pass on `tape`. `params` holds `[W₁, b₁, W₂, b₂]`.
/// `masks` supplies per-layer dropout masks in train mode.
pub fn gcn_forward(
    tape: &mut Tape,
    prop: &Arc<SparseMatrix>,
    x: Var,
    params: &[Var],
    masks: Option<[Tensor; 2]>,
) -> Result<Var> {
    let [w1, b1, w2, b2] = params else {
        return Err(Error::shape(
            "gcn_forward",
            format!("expected 4 parameters, got {}", params.len()),
        ));
    };
    let (m0, m1) = match masks {
        Some([a, b]) => (Some(a), Some(b)),
        None => (None, None),
    };
    let mut h = x;
    if let Some(m) = m0 {
        h = tape.dropout(h, m)?;
    }
    let h = tape.spmm(prop, h)?;
    let h = tape.matmul(h, *w1)?;
    let h = tape.add_bias(h, *b1)?;
    let mut h = tape.relu(h)?;
    if let Some(m) = m1 {
        h = tape.dropout(h, m)?;
    }
    let h = tape.spmm(prop, h)?;
    let h = tape.matmul(h, *w2)?;
    let h = tape.add_bias(h, *b2)?;
    tape.row_softmax(h)
}

fn tag_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("detector epoch {epoch}: {context}"),
        },
        other => other,
    }
}

/// Trains the detector and scores every node.
pub fn train_detector(g: &Graph, split: &NodeSplit, hyper: &DetectorHyper) -> Result<TrainedDetector> {
    hyper.validate()?;
    if split.len() != g.num_nodes() {
        return Err(Error::shape("train_detector", "split length differs from node count"));
    }
    let train = split.indices(Split::Train);
    let labels = g.labels();
    let weights = class_weights(labels, &train)?;
    let targets: Vec<usize> = train.iter().map(|&i| usize::from(labels[i])).collect();

    let prop = Arc::new(g.gcn_propagation());
    let d = g.features().cols();
    let mut init = stream(hyper.seed, &[0xDE7, 0]);
    let mut params = ParamStore::new();
    params.insert_glorot("gcn.w1", d, hyper.hidden, 1.0, &mut init);
    params.insert("gcn.b1", Tensor::zeros(1, hyper.hidden));
    params.insert_glorot("gcn.w2", hyper.hidden, 2, 1.0, &mut init);
    params.insert("gcn.b2", Tensor::zeros(1, 2));

    let adam = AdamConfig {
        lr: hyper.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(params.tensors());
    let n = g.num_nodes();
    for epoch in 0..hyper.epochs {
        let masks = (hyper.dropout > 0.0).then(|| {
            let mut rng = stream(hyper.seed, &[0xDE7, 1, epoch as u64]);
            [
                dropout_mask(n, d, hyper.dropout, &mut rng),
                dropout_mask(n, hyper.hidden, hyper.dropout, &mut rng),
            ]
        });
        let mut tape = Tape::new();
        let x = tape.constant(g.features().clone());
        let vars = params.attach(&mut tape);
        let step = (|| {
            let probs = gcn_forward(&mut tape, &prop, x, &vars, masks)?;
            tape.weighted_nll(probs, &train, &targets, &weights)
        })();
        let loss = step.map_err(|e| tag_epoch(e, epoch))?;
        let grads = tape.backward(loss)?;
        let grads: Vec<_> = vars.iter().map(|&v| grads.get(v)).collect();
        adam_step(params.tensors_mut(), &grads, &mut state, &adam)?;
        if !params.tensors().iter().all(|t| t.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("detector epoch {epoch}: parameter update"),
            });
        }
    }

    let mut tape = Tape::new();
    let x = tape.constant(g.features().clone());
    let vars: Vec<Var> = params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
    let probs = gcn_forward(&mut tape, &prop, x, &vars, None)?;
    let scores = ScoreTable::from_probs(tape.value(probs), labels, split)?;
    Ok(TrainedDetector { params, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_synthetic, split_nodes, SplitRatios, SynthConfig};
    use crate::metrics::roc_auc;

    fn test_auc(cfg: &SynthConfig, seed: u64) -> f64 {
        let g = generate_synthetic(cfg, seed).unwrap();
        let split = split_nodes(&g, SplitRatios::new(0.5, 0.25, 0.25).unwrap(), seed).unwrap();
        let hyper = DetectorHyper {
            seed,
            ..DetectorHyper::default()
        };
        let t = train_detector(&g, &split, &hyper).unwrap().scores;
        let (p, y): (Vec<f64>, Vec<u8>) = t.in_split(Split::Test).map(|r| (r.p_anomaly, r.label)).unzip();
        roc_auc(&p, &y).unwrap()
    }

    #[test]
    fn separable_features_give_high_auc() {
        let cfg = SynthConfig {
            n: 500,
            feature_shift: 4.0,
            // Heterophilic anomalies are smoothed away by propagation.
            heterophily: 0.1,
            ..SynthConfig::default()
        };
        let auc = test_auc(&cfg, 1);
        assert!(auc > 0.9, "auc {auc}");
    }

    #[test]
    fn uninformative_inputs_give_chance_auc() {
        let cfg = SynthConfig {
            n: 1000,
            feature_shift: 0.0,
            heterophily: 0.5,
            ..SynthConfig::default()
        };
        let auc = test_auc(&cfg, 2);
        assert!((0.4..=0.6).contains(&auc), "auc {auc}");
    }

    fn small() -> (Graph, NodeSplit) {
        let cfg = SynthConfig {
            n: 300,
            ..SynthConfig::default()
        };
        let g = generate_synthetic(&cfg, 3).unwrap();
        let split = split_nodes(&g, SplitRatios::new(0.4, 0.3, 0.3).unwrap(), 3).unwrap();
        (g, split)
    }

    #[test]
    fn training_is_deterministic() {
        let (g, split) = small();
        let hyper = DetectorHyper {
            epochs: 20,
            dropout: 0.3,
            ..DetectorHyper::default()
        };
        let a = train_detector(&g, &split, &hyper).unwrap();
        let b = train_detector(&g, &split, &hyper).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.params.tensors(), b.params.tensors());
    }

    #[test]
    fn held_out_labels_are_never_read() {
        let (g, split) = small();
        let poisoned: Vec<u8> = g
            .labels()
            .iter()
            .zip(&split.assignment)
            .map(|(&y, &s)| if s == Split::Train { y } else { 1 - y })
            .collect();
        let g2 = g.with_labels(poisoned).unwrap();
        let hyper = DetectorHyper {
            epochs: 20,
            ..DetectorHyper::default()
        };
        let a = train_detector(&g, &split, &hyper).unwrap();
        let b = train_detector(&g2, &split, &hyper).unwrap();
        assert_eq!(a.params.tensors(), b.params.tensors());
        let pa: Vec<f64> = a.scores.anomaly_column();
        assert_eq!(pa, b.scores.anomaly_column());
    }

    #[test]
    fn output_covers_every_node() {
        let (g, split) = small();
        let hyper = DetectorHyper {
            epochs: 2,
            ..DetectorHyper::default()
        };
        let t = train_detector(&g, &split, &hyper).unwrap().scores;
        let ids: Vec<usize> = t.rows().iter().map(|r| r.node_id).collect();
        assert_eq!(ids, (0..g.num_nodes()).collect::<Vec<_>>());
    }
}
