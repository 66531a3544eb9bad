//! Two-block planted-anomaly generator.
//!
//! Normal nodes draw features from a standard Gaussian; anomalies add
//! `feature_shift` along one random unit direction. Edge probabilities:
//!
//! | pair              | probability                      |
//! |-------------------|----------------------------------|
//! | normal–normal     | `intra_p`                        |
//! | anomaly–normal    | `min(1, 2·heterophily·inter_p)`  |
//! | anomaly–anomaly   | `min(1, 2·(1−heterophily)·inter_p)` |
//!
//! `heterophily = 0.5` with `intra_p = inter_p` is an Erdős–Rényi graph
//! with no structural class signal.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{build_graph, Graph};
use crate::rng::stream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub anomaly_rate: f64,
    pub intra_p: f64,
    pub inter_p: f64,
    pub feature_shift: f64,
    pub heterophily: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            d: 16,
            anomaly_rate: 0.1,
            intra_p: 0.005,
            inter_p: 0.005,
            feature_shift: 1.5,
            heterophily: 0.9,
        }
    }
}

impl SynthConfig {
    pub fn num_anomalies(&self) -> usize {
        (self.anomaly_rate * self.n as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.d == 0 {
            return bad("feature dimension must be positive".into());
        }
        if !(self.anomaly_rate > 0.0 && self.anomaly_rate < 1.0) {
            return bad(format!("anomaly_rate {} outside (0,1)", self.anomaly_rate));
        }
        if self.anomaly_rate * (self.n as f64) < 10.0 {
            return bad(format!(
                "anomaly_rate·n = {} < 10 anomalies",
                self.anomaly_rate * self.n as f64
            ));
        }
        for (name, p) in [
            ("intra_p", self.intra_p),
            ("inter_p", self.inter_p),
            ("heterophily", self.heterophily),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0,1]"));
            }
        }
        if !(self.feature_shift >= 0.0 && self.feature_shift.is_finite()) {
            return bad(format!("feature_shift {} must be finite and ≥ 0", self.feature_shift));
        }
        Ok(())
    }
}

pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.n;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[0x6e, 0]));
    let mut labels = vec![0u8; n];
    for &i in &order[..cfg.num_anomalies()] {
        labels[i] = 1;
    }

    let mut rng = stream(seed, &[0x6e, 1]);
    let mut direction: Vec<f64> = (0..cfg.d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);

    let mut features = Tensor::zeros(n, cfg.d);
    for (i, &label) in labels.iter().enumerate() {
        for (j, f) in features.row_mut(i).iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *f = z + if label == 1 {
                cfg.feature_shift * direction[j]
            } else {
                0.0
            };
        }
    }

    let p_an = (2.0 * cfg.heterophily * cfg.inter_p).min(1.0);
    let p_aa = (2.0 * (1.0 - cfg.heterophily) * cfg.inter_p).min(1.0);
    let mut rng = stream(seed, &[0x6e, 2]);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = match (labels[i], labels[j]) {
                (0, 0) => cfg.intra_p,
                (1, 1) => p_aa,
                _ => p_an,
            };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    build_graph(&edges, n, features, labels)
}
