//! Class-conditional set-miss risks and the finite-sample threshold rule.
//!
//! For a calibration sample of size `n`, a loss bounded by `B`, and target
//! level `α`, the calibrated threshold is
//!
//! ```text
//! λ̂ = inf { λ : R̂_n(λ) ≤ α − (B − α)/n }
//! ```
//!
//! where `R̂_n` is the mean indicator loss. Both risks here are step
//! functions of `λ` with breakpoints at the calibration scores (normal
//! class) or at `1 − score` (anomalous class), so the infimum is found
//! exactly by searching a finite candidate set.

use std::fmt;

use crate::error::{Error, Result};

/// Which class-conditional risk is being controlled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeClass {
    /// Label 0. Its risk is the set-based false positive rate.
    Normal,
    /// Label 1. Its risk is the set-based false negative rate.
    Anomalous,
}

impl NodeClass {
    pub fn label(self) -> u8 {
        match self {
            NodeClass::Normal => 0,
            NodeClass::Anomalous => 1,
        }
    }

    pub fn from_label(label: u8) -> Self {
        if label == 1 {
            NodeClass::Anomalous
        } else {
            NodeClass::Normal
        }
    }
}

impl fmt::Display for NodeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeClass::Normal => "normal",
            NodeClass::Anomalous => "anomalous",
        })
    }
}

/// Risk targets for the two class-conditional guarantees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskSpec {
    pub alpha_fnr: f64,
    pub alpha_fpr: f64,
    /// Upper bound `B` on the loss; 1 for indicator losses.
    pub bound: f64,
    /// Offset added to a breakpoint to step past it.
    pub delta: f64,
}

impl Default for RiskSpec {
    fn default() -> Self {
        Self {
            alpha_fnr: 0.1,
            alpha_fpr: 0.1,
            bound: 1.0,
            delta: 1e-9,
        }
    }
}

impl RiskSpec {
    pub fn new(alpha_fnr: f64, alpha_fpr: f64) -> Result<Self> {
        let spec = Self {
            alpha_fnr,
            alpha_fpr,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("alpha_fnr", self.alpha_fnr), ("alpha_fpr", self.alpha_fpr)] {
            if !(a > 0.0 && a < 1.0 && a < self.bound) {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {a} must lie in (0, 1) and below B = {}",
                    self.bound
                )));
            }
        }
        if self.delta.is_nan() || self.delta <= 0.0 {
            return Err(Error::InvalidConfig(format!("delta = {} must be > 0", self.delta)));
        }
        Ok(())
    }

    /// Target level for the risk of `class`.
    pub fn alpha(&self, class: NodeClass) -> f64 {
        match class {
            NodeClass::Normal => self.alpha_fpr,
            NodeClass::Anomalous => self.alpha_fnr,
        }
    }
}

/// Indicator loss of a single node of `class` at threshold `lambda`.
///
/// Normal: the set drops label 0 when `p_anomaly ≥ λ`.
/// Anomalous: the set drops label 1 when `p_anomaly < 1 − λ`.
#[inline]
pub fn set_miss(p_anomaly: f64, class: NodeClass, lambda: f64) -> bool {
    match class {
        NodeClass::Normal => p_anomaly >= lambda,
        NodeClass::Anomalous => p_anomaly < 1.0 - lambda,
    }
}

/// Mean indicator loss over `scores` (anomaly probabilities of nodes that
/// all belong to `class`).
pub fn empirical_risk(scores: &[f64], class: NodeClass, lambda: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::MissingClass(class));
    }
    let misses = scores.iter().filter(|&&p| set_miss(p, class, lambda)).count();
    Ok(misses as f64 / scores.len() as f64)
}

/// Adjusted level `α − (B − α)/n` the empirical risk must not exceed.
pub fn adjusted_level(alpha: f64, bound: f64, n: usize) -> f64 {
    alpha - (bound - alpha) / n as f64
}

/// Absorbs rounding when the empirical risk lands exactly on the level.
const LEVEL_SLACK: f64 = 1e-12;

/// Smallest `λ` in `{0} ∪ {breakpoint + δ} ∪ {1}` whose empirical risk is at
/// most `α − (B − α)/n`.
pub fn calibrate_threshold(scores: &[f64], class: NodeClass, alpha: f64, bound: f64, delta: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::MissingClass(class));
    }
    if let Some(bad) = scores.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidConfig(format!("score {bad} outside [0,1]")));
    }
    let n = scores.len();
    let level = adjusted_level(alpha, bound, n);
    if level < 0.0 {
        return Err(Error::InsufficientCalibration {
            class,
            n,
            alpha,
            bound: level,
        });
    }

    let mut candidates: Vec<f64> = Vec::with_capacity(n + 2);
    candidates.push(0.0);
    candidates.push(1.0);
    candidates.extend(scores.iter().map(|&p| {
        let breakpoint = match class {
            NodeClass::Normal => p,
            NodeClass::Anomalous => 1.0 - p,
        };
        breakpoint + delta
    }));
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // Risk is non-increasing in λ and zero at the largest candidate, so the
    // satisfying candidates form a suffix.
    let first_ok = candidates.partition_point(|&lambda| {
        let risk = empirical_risk(scores, class, lambda).expect("nonempty");
        risk > level + LEVEL_SLACK
    });
    Ok(candidates[first_ok])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    const DELTA: f64 = 1e-9;

    /// Brute-force oracle: scan λ on a grid and return the first grid point
    /// meeting the level.
    fn grid_oracle(scores: &[f64], class: NodeClass, alpha: f64, step: f64) -> f64 {
        let level = adjusted_level(alpha, 1.0, scores.len());
        let steps = (1.0 / step).round() as usize + 2;
        (0..=steps)
            .map(|k| k as f64 * step)
            .find(|&l| empirical_risk(scores, class, l).unwrap() <= level + LEVEL_SLACK)
            .unwrap()
    }

    #[test]
    fn boundary_risks() {
        let s = [0.0, 0.3, 1.0];
        assert_eq!(empirical_risk(&s, NodeClass::Normal, 0.0).unwrap(), 1.0);
        assert_eq!(empirical_risk(&s, NodeClass::Anomalous, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn normal_risk_counts_scores_at_or_above_lambda() {
        let r = empirical_risk(&[0.9, 0.4, 0.1], NodeClass::Normal, 0.5).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_scores_are_an_error() {
        assert!(empirical_risk(&[], NodeClass::Normal, 0.5).is_err());
        assert!(calibrate_threshold(&[], NodeClass::Normal, 0.1, 1.0, DELTA).is_err());
    }

    #[test]
    fn nine_normal_scores() {
        let s = [0.95, 0.80, 0.60, 0.40, 0.30, 0.20, 0.15, 0.10, 0.05];
        let lam = calibrate_threshold(&s, NodeClass::Normal, 0.2, 1.0, DELTA).unwrap();
        assert_eq!(lam, 0.80 + DELTA);
        let oracle = grid_oracle(&s, NodeClass::Normal, 0.2, 1e-6);
        assert!((lam - oracle).abs() <= DELTA + 1e-6, "{lam} vs {oracle}");
    }

    #[test]
    fn single_score() {
        let lam = calibrate_threshold(&[0.5], NodeClass::Normal, 0.9, 1.0, DELTA).unwrap();
        assert_eq!(lam, 0.5 + DELTA);
        // Two-point enumeration: just below and at the returned value.
        assert_eq!(empirical_risk(&[0.5], NodeClass::Normal, 0.5).unwrap(), 1.0);
        assert_eq!(empirical_risk(&[0.5], NodeClass::Normal, lam).unwrap(), 0.0);
    }

    #[test]
    fn small_sample_is_infeasible() {
        let err = calibrate_threshold(&[0.1; 5], NodeClass::Anomalous, 0.1, 1.0, DELTA).unwrap_err();
        match err {
            Error::InsufficientCalibration { n, bound, class, .. } => {
                assert_eq!(n, 5);
                assert_eq!(class, NodeClass::Anomalous);
                assert!((bound + 0.08).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn anomalous_threshold_uses_complement_breakpoints() {
        // Same pattern as the nine-score normal case, mirrored: f = 1 − s.
        let s = [0.95, 0.80, 0.60, 0.40, 0.30, 0.20, 0.15, 0.10, 0.05];
        let f: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
        let lam = calibrate_threshold(&f, NodeClass::Anomalous, 0.2, 1.0, DELTA).unwrap();
        assert!((lam - (0.80 + DELTA)).abs() < 1e-15);
        assert!(empirical_risk(&f, NodeClass::Anomalous, lam).unwrap() <= adjusted_level(0.2, 1.0, 9));
    }

    #[test]
    fn result_is_minimal_among_candidates() {
        let mut rng = stream(21, &[]);
        for _ in 0..200 {
            let n = rng.random_range(10..60);
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            for class in [NodeClass::Normal, NodeClass::Anomalous] {
                let lam = calibrate_threshold(&scores, class, 0.2, 1.0, DELTA).unwrap();
                let level = adjusted_level(0.2, 1.0, n);
                assert!(empirical_risk(&scores, class, lam).unwrap() <= level + LEVEL_SLACK);
                // Any smaller λ by more than δ violates the level.
                let below = lam - 2.0 * DELTA;
                if below >= 0.0 {
                    assert!(empirical_risk(&scores, class, below).unwrap() > level);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn risk_is_non_increasing_in_lambda(
            scores in prop::collection::vec(0.0f64..=1.0, 1..50),
            normal in any::<bool>(),
        ) {
            let class = if normal { NodeClass::Normal } else { NodeClass::Anomalous };
            let mut prev = f64::INFINITY;
            for k in 0..=1000 {
                let r = empirical_risk(&scores, class, k as f64 * 1e-3).unwrap();
                prop_assert!(r <= prev);
                prev = r;
            }
        }
    }
}
