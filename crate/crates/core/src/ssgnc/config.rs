use crate::error::{Error, Result};

/// Architecture and optimizer settings for the spectral calibrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsgncConfig {
    /// Prototype (subgraph) count `K`.
    pub prototypes: usize,
    /// Chebyshev order `M`.
    pub cheb_order: usize,
    pub layers: usize,
    /// Routing iterations `T`.
    pub route_iters: usize,
    /// Prototype momentum `β`.
    pub beta: f64,
    /// Routing denominator guard `ε`.
    pub epsilon: f64,
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    /// L2 penalty on weight matrices, added to their gradients.
    pub weight_decay: f64,
    pub epochs: usize,
    /// Keep the parameters of the epoch with the smallest internal-fold
    /// inefficiency instead of the last epoch.
    pub select_best: bool,
    /// Filter on `L̃ − I` instead of `L̃`.
    pub rescale_spectrum: bool,
    /// Append the base detector's two probabilities to the node features.
    pub use_detector_scores: bool,
    /// Fraction of Train held out per class for threshold recalibration.
    pub internal_fraction: f64,
}

impl Default for SsgncConfig {
    fn default() -> Self {
        Self {
            prototypes: 5,
            cheb_order: 2,
            layers: 2,
            route_iters: 3,
            beta: 0.9,
            epsilon: 1e-8,
            hidden: 16,
            dropout: 0.0,
            lr: 0.01,
            weight_decay: 0.0,
            epochs: 200,
            select_best: true,
            rescale_spectrum: false,
            use_detector_scores: true,
            internal_fraction: 0.3,
        }
    }
}

impl SsgncConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.prototypes == 0 || self.cheb_order == 0 || self.layers == 0 || self.hidden == 0 {
            return bad("ssgnc prototypes, cheb_order, layers and hidden must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("ssgnc beta = {} outside [0,1)", self.beta));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("ssgnc epsilon = {} must be > 0", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("ssgnc dropout = {} outside [0,1)", self.dropout));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("ssgnc lr = {} must be > 0", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("ssgnc weight_decay = {} must be >= 0", self.weight_decay));
        }
        if !(self.internal_fraction > 0.0 && self.internal_fraction < 1.0) {
            return bad(format!(
                "ssgnc internal_fraction = {} outside (0,1)",
                self.internal_fraction
            ));
        }
        Ok(())
    }
}

/// Weighted cross-entropy plus a smooth expected-set-size penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridLossSpec {
    pub gamma: f64,
    /// Sigmoid temperature `τ`.
    pub tau: f64,
    /// `None` derives inverse-frequency weights from the fitting rows.
    pub class_weights: Option<[f64; 2]>,
    /// Epochs between threshold recalibrations on the internal fold.
    pub refresh_every: usize,
}

impl Default for HybridLossSpec {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            tau: 0.1,
            class_weights: None,
            refresh_every: 10,
        }
    }
}

impl HybridLossSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma = {} must be >= 0", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau = {} must be > 0", self.tau)));
        }
        if self.refresh_every == 0 {
            return Err(Error::InvalidConfig("refresh_every must be >= 1".into()));
        }
        if let Some(w) = self.class_weights {
            if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidConfig(format!("class weights {w:?} must be > 0")));
            }
        }
        Ok(())
    }
}
