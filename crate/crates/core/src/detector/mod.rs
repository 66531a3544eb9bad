//! Base anomaly scorers and the score table they emit.

mod gcn;
mod scores;

pub use gcn::{gcn_forward, train_detector, DetectorHyper, TrainedDetector};
pub use scores::{ScoreRow, ScoreTable, SCORE_HEADER};

use crate::error::{Error, Result};

/// Inverse-frequency class weights `n/(2·n_c)` over the listed rows.
pub fn class_weights(labels: &[u8], rows: &[usize]) -> Result<[f64; 2]> {
    let n = rows.len() as f64;
    let n1 = rows.iter().filter(|&&i| labels[i] == 1).count() as f64;
    let n0 = n - n1;
    if n0 == 0.0 || n1 == 0.0 {
        return Err(Error::InfeasibleSplit(format!(
            "training rows contain {n0} normal and {n1} anomalous nodes; both classes are required"
        )));
    }
    Ok([n / (2.0 * n0), n / (2.0 * n1)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_balance_classes() {
        let labels = [0, 0, 0, 1];
        let w = class_weights(&labels, &[0, 1, 2, 3]).unwrap();
        assert_eq!(w, [4.0 / 6.0, 2.0]);
        assert!(((w[0] * 3.0) - w[1]).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(class_weights(&[0, 0, 1], &[0, 1]).is_err());
    }
}
