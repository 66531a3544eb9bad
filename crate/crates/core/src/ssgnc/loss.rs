use crate::conformal::DualThresholds;
use crate::error::{Error, Result};
use crate::ssgnc::HybridLossSpec;
use crate::tensor::{sigmoid, Tape, Var};

/// Loss handles: the total and its two components.
#[derive(Debug, Clone, Copy)]
pub struct HybridLoss {
    pub total: Var,
    pub wce: Var,
    /// `γ`-weighted size term.
    pub size: Var,
}

/// Smooth set size `σ((λ_n − f)/τ) + σ((f − (1 − λ_a))/τ)`.
pub fn smooth_set_size(p_anomaly: f64, lambda_normal: f64, lambda_ano: f64, tau: f64) -> f64 {
    sigmoid((lambda_normal - p_anomaly) / tau) + sigmoid((p_anomaly - (1.0 - lambda_ano)) / tau)
}

/// Records the hybrid loss over `rows` of an `n×2` probability matrix.
/// Thresholds enter as constants.
pub fn hybrid_loss(
    tape: &mut Tape,
    probs: Var,
    labels: &[u8],
    rows: &[usize],
    weights: [f64; 2],
    thresholds: &DualThresholds,
    spec: &HybridLossSpec,
) -> Result<HybridLoss> {
    if rows.is_empty() {
        return Err(Error::shape("hybrid_loss", "no training rows"));
    }
    let targets: Vec<usize> = rows.iter().map(|&i| usize::from(labels[i])).collect();
    let wce = tape.weighted_nll(probs, rows, &targets, &weights)?;
    let f = tape.col_slice(probs, 1)?;
    let f = tape.select_rows(f, rows)?;
    let inv = 1.0 / spec.tau;
    let keep_normal = tape.affine(f, -inv, thresholds.lambda_normal * inv)?;
    let keep_normal = tape.sigmoid(keep_normal)?;
    let keep_ano = tape.affine(f, inv, -(1.0 - thresholds.lambda_ano) * inv)?;
    let keep_ano = tape.sigmoid(keep_ano)?;
    let size = tape.add(keep_normal, keep_ano)?;
    let size = tape.mean(size)?;
    let size = tape.scale(size, spec.gamma)?;
    let total = tape.add(wce, size)?;
    Ok(HybridLoss { total, wce, size })
}
