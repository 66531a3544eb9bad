//! Split-conformal classification baselines: TPS, APS and RAPS scores with
//! the order-statistic quantile rule.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::conformal::PredictionSet;
use crate::detector::ScoreTable;
use crate::error::{Error, Result};
use crate::graph::Split;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CpMethod {
    Tps,
    Aps,
    Raps,
}

impl CpMethod {
    pub const ALL: [CpMethod; 3] = [CpMethod::Tps, CpMethod::Aps, CpMethod::Raps];
}

impl fmt::Display for CpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CpMethod::Tps => "CP-TPS",
            CpMethod::Aps => "CP-APS",
            CpMethod::Raps => "CP-RAPS",
        })
    }
}

impl FromStr for CpMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().trim_start_matches("cp-") {
            "tps" => Ok(CpMethod::Tps),
            "aps" => Ok(CpMethod::Aps),
            "raps" => Ok(CpMethod::Raps),
            other => Err(format!("unknown conformal method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpSettings {
    pub k_reg: usize,
    pub lambda_reg: f64,
    /// Randomized tie-breaking for APS/RAPS.
    pub randomized: bool,
}

impl Default for CpSettings {
    fn default() -> Self {
        Self {
            k_reg: 1,
            lambda_reg: 0.01,
            randomized: false,
        }
    }
}

impl CpSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda_reg = {} must be finite and >= 0",
                self.lambda_reg
            )));
        }
        Ok(())
    }
}

/// 1-based rank of `label` when classes are sorted by descending
/// probability. Ties rank the lower label first.
fn rank(probs: [f64; 2], label: usize) -> usize {
    let other = 1 - label;
    let ahead = probs[other] > probs[label] || (probs[other] == probs[label] && other < label);
    1 + usize::from(ahead)
}

/// Nonconformity score with a uniform draw `u` weighting the true class's
/// own mass. `u = 1` gives the non-randomized score.
pub fn cp_score_with(method: CpMethod, probs: [f64; 2], label: usize, settings: &CpSettings, u: f64) -> f64 {
    let r = rank(probs, label);
    let p_true = probs[label];
    let before = if r == 2 { probs[1 - label] } else { 0.0 };
    let aps = before + u * p_true;
    match method {
        CpMethod::Tps => 1.0 - p_true,
        CpMethod::Aps => aps,
        CpMethod::Raps => aps + settings.lambda_reg * r.saturating_sub(settings.k_reg) as f64,
    }
}

/// Non-randomized nonconformity score of `label` under `probs`.
pub fn cp_score(method: CpMethod, probs: [f64; 2], label: usize, settings: &CpSettings) -> f64 {
    cp_score_with(method, probs, label, settings, 1.0)
}

/// The `⌈(n+1)(1−α)⌉`-th smallest score, or `None` when that index
/// exceeds `n` (the quantile is `+∞`).
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Option<f64> {
    let n = scores.len();
    let k = (((n + 1) as f64) * (1.0 - alpha) - 1e-9).ceil().max(1.0) as usize;
    if k > n {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[k - 1])
}

/// Outcome of one split-conformal run.
#[derive(Debug, Clone, PartialEq)]
pub struct CpOutcome {
    pub method: CpMethod,
    /// `f64::INFINITY` when the calibration set is too small for `α`.
    pub qhat: f64,
    pub n_calib: usize,
    /// `(node_id, set)` for every Test row, in table order.
    pub sets: Vec<(usize, PredictionSet)>,
}

impl CpOutcome {
    pub fn is_trivial(&self) -> bool {
        self.qhat.is_infinite()
    }
}

fn draw(randomized: bool, seed: u64, node_id: usize, label: usize) -> f64 {
    if randomized {
        stream(seed, &[0xC0F0, node_id as u64, label as u64]).random::<f64>()
    } else {
        1.0
    }
}

/// Calibrates on the table's `Calib` rows and builds sets for its `Test`
/// rows. `seed` only matters for the randomized variant.
pub fn cp_calibrate_and_predict(
    table: &ScoreTable,
    method: CpMethod,
    alpha: f64,
    settings: &CpSettings,
    seed: u64,
) -> Result<CpOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    settings.validate()?;
    let randomized = settings.randomized && method != CpMethod::Tps;
    let calib: Vec<f64> = table
        .in_split(Split::Calib)
        .map(|r| {
            let y = usize::from(r.label);
            cp_score_with(method, r.probs(), y, settings, draw(randomized, seed, r.node_id, y))
        })
        .collect();
    if calib.is_empty() {
        return Err(Error::InvalidConfig("calibration split is empty".into()));
    }
    let qhat = conformal_quantile(&calib, alpha).unwrap_or(f64::INFINITY);
    let sets = table
        .in_split(Split::Test)
        .map(|r| {
            let member =
                |c: usize| cp_score_with(method, r.probs(), c, settings, draw(randomized, seed, r.node_id, c)) <= qhat;
            (r.node_id, PredictionSet::from_membership(member(0), member(1)))
        })
        .collect();
    Ok(CpOutcome {
        method,
        qhat,
        n_calib: calib.len(),
        sets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::ScoreRow;

    const S: CpSettings = CpSettings {
        k_reg: 1,
        lambda_reg: 0.01,
        randomized: false,
    };

    #[test]
    fn score_definitions() {
        assert!((cp_score(CpMethod::Tps, [0.3, 0.7], 1, &S) - 0.3).abs() < 1e-15);
        assert_eq!(cp_score(CpMethod::Aps, [0.3, 0.7], 0, &S), 1.0);
        let raps = CpSettings { lambda_reg: 0.1, ..S };
        assert!((cp_score(CpMethod::Raps, [0.3, 0.7], 0, &raps) - 1.1).abs() < 1e-15);
        assert_eq!(cp_score(CpMethod::Raps, [0.3, 0.7], 1, &raps), 0.7);
    }

    #[test]
    fn quantile_order_statistic() {
        let s: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        assert_eq!(conformal_quantile(&s, 0.1), Some(0.9));
        assert_eq!(conformal_quantile(&s, 0.05), None);
        assert_eq!(conformal_quantile(&s, 0.95), Some(0.1));
    }

    fn table(rows: &[(f64, u8, Split)]) -> ScoreTable {
        ScoreTable::new(
            rows.iter()
                .enumerate()
                .map(|(i, &(p, label, split))| ScoreRow {
                    node_id: i,
                    p_normal: 1.0 - p,
                    p_anomaly: p,
                    label,
                    split,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn tps_set_from_quantile() {
        // Calibration scores 1 − p_true = 0.4 for every row → q̂ = 0.4.
        let mut rows: Vec<(f64, u8, Split)> = (0..20).map(|_| (0.6, 1, Split::Calib)).collect();
        rows.push((0.7, 0, Split::Test));
        let out = cp_calibrate_and_predict(&table(&rows), CpMethod::Tps, 0.1, &S, 0).unwrap();
        assert!((out.qhat - 0.4).abs() < 1e-12);
        assert_eq!(out.sets, vec![(20, PredictionSet::ANOMALY)]);
    }

    #[test]
    fn tiny_calibration_gives_full_sets() {
        let rows = [(0.2, 0, Split::Calib), (0.9, 1, Split::Test)];
        let out = cp_calibrate_and_predict(&table(&rows), CpMethod::Aps, 0.1, &S, 0).unwrap();
        assert!(out.is_trivial());
        assert_eq!(out.sets[0].1, PredictionSet::BOTH);
    }

    #[test]
    fn sets_shrink_as_alpha_grows() {
        let rows: Vec<(f64, u8, Split)> = (0..200)
            .map(|i| {
                let p = (i as f64 * 0.618).fract();
                let split = if i % 2 == 0 { Split::Calib } else { Split::Test };
                (p, u8::from(i % 3 == 0), split)
            })
            .collect();
        let t = table(&rows);
        for method in CpMethod::ALL {
            let mut prev = usize::MAX;
            for alpha in [0.05, 0.2, 0.5, 0.8, 0.99] {
                let out = cp_calibrate_and_predict(&t, method, alpha, &S, 0).unwrap();
                let size: usize = out.sets.iter().map(|(_, s)| s.size()).sum();
                assert!(size <= prev, "{method} at {alpha}");
                prev = size;
            }
        }
    }

    #[test]
    fn randomized_variant_is_seeded() {
        let rows: Vec<(f64, u8, Split)> = (0..100)
            .map(|i| ((i as f64 * 0.37).fract(), u8::from(i % 4 == 0), Split::ALL[1 + i % 2]))
            .collect();
        let t = table(&rows);
        let s = CpSettings { randomized: true, ..S };
        let a = cp_calibrate_and_predict(&t, CpMethod::Aps, 0.1, &s, 5).unwrap();
        let b = cp_calibrate_and_predict(&t, CpMethod::Aps, 0.1, &s, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn method_names_parse() {
        assert_eq!("raps".parse::<CpMethod>().unwrap(), CpMethod::Raps);
        assert_eq!("CP-TPS".parse::<CpMethod>().unwrap(), CpMethod::Tps);
        assert!("xyz".parse::<CpMethod>().is_err());
    }
}
