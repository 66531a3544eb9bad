use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::conformal::risk::{calibrate_threshold, empirical_risk, NodeClass, RiskSpec};
use crate::conformal::PredictionSet;
use crate::detector::ScoreTable;
use crate::error::{Error, Result};
use crate::graph::Split;

/// Calibrated pair of class-conditional thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualThresholds {
    /// Controls the set-based false positive rate on normal nodes.
    pub lambda_normal: f64,
    /// Controls the set-based false negative rate on anomalous nodes.
    pub lambda_ano: f64,
    pub n_normal: usize,
    pub n_ano: usize,
    pub spec: RiskSpec,
}

/// Set predictor for the normal class: drops label 0 once `p ≥ λ_normal`.
pub fn normal_side_set(p_anomaly: f64, lambda_normal: f64) -> PredictionSet {
    if p_anomaly >= lambda_normal {
        PredictionSet::ANOMALY
    } else {
        PredictionSet::BOTH
    }
}

/// Set predictor for the anomalous class: drops label 1 while
/// `p < 1 − λ_ano`.
pub fn anomaly_side_set(p_anomaly: f64, lambda_ano: f64) -> PredictionSet {
    if p_anomaly < 1.0 - lambda_ano {
        PredictionSet::NORMAL
    } else {
        PredictionSet::BOTH
    }
}

/// Intersection of the two class-side predictors.
pub fn predict_set(p_anomaly: f64, t: &DualThresholds) -> PredictionSet {
    normal_side_set(p_anomaly, t.lambda_normal).intersect(anomaly_side_set(p_anomaly, t.lambda_ano))
}

/// Calibrates both thresholds from parallel score/label slices.
pub fn calibrate_dual_scores(p_anomaly: &[f64], labels: &[u8], spec: &RiskSpec) -> Result<DualThresholds> {
    spec.validate()?;
    let mut normal = Vec::new();
    let mut ano = Vec::new();
    for (&p, &y) in p_anomaly.iter().zip(labels) {
        if y == 1 {
            ano.push(p);
        } else {
            normal.push(p);
        }
    }
    let lambda_normal = calibrate_threshold(&normal, NodeClass::Normal, spec.alpha_fpr, spec.bound, spec.delta)?;
    let lambda_ano = calibrate_threshold(&ano, NodeClass::Anomalous, spec.alpha_fnr, spec.bound, spec.delta)?;
    Ok(DualThresholds {
        lambda_normal,
        lambda_ano,
        n_normal: normal.len(),
        n_ano: ano.len(),
        spec: *spec,
    })
}

/// Calibrates on the `Calib` rows of a score table.
pub fn calibrate_dual(table: &ScoreTable, spec: &RiskSpec) -> Result<DualThresholds> {
    let (p, y): (Vec<f64>, Vec<u8>) = table.in_split(Split::Calib).map(|r| (r.p_anomaly, r.label)).unzip();
    calibrate_dual_scores(&p, &y, spec)
}

/// One line of the calibration report.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationLine {
    pub class: NodeClass,
    pub alpha: f64,
    pub n_calib: usize,
    pub lambda_hat: f64,
    pub empirical_risk: f64,
}

/// Report rows for both classes, with the empirical calibration risk at the
/// chosen threshold.
pub fn calibration_report(table: &ScoreTable, t: &DualThresholds) -> Result<Vec<CalibrationLine>> {
    [NodeClass::Normal, NodeClass::Anomalous]
        .into_iter()
        .map(|class| {
            let scores: Vec<f64> = table
                .in_split(Split::Calib)
                .filter(|r| r.label == class.label())
                .map(|r| r.p_anomaly)
                .collect();
            let (lambda_hat, n) = match class {
                NodeClass::Normal => (t.lambda_normal, t.n_normal),
                NodeClass::Anomalous => (t.lambda_ano, t.n_ano),
            };
            if scores.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "thresholds were calibrated on {n} {class} nodes, table has {}",
                    scores.len()
                )));
            }
            Ok(CalibrationLine {
                class,
                alpha: t.spec.alpha(class),
                n_calib: n,
                lambda_hat,
                empirical_risk: empirical_risk(&scores, class, lambda_hat)?,
            })
        })
        .collect()
}

pub const CALIBRATION_HEADER: &str = "class,alpha,n_calib,lambda_hat,empirical_risk_at_lambda";

pub fn write_calibration_report(path: &Path, lines: &[CalibrationLine]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "{CALIBRATION_HEADER}")?;
        for l in lines {
            writeln!(
                w,
                "{},{},{},{},{}",
                l.class, l.alpha, l.n_calib, l.lambda_hat, l.empirical_risk
            )?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::ScoreRow;

    fn thresholds(lambda_normal: f64, lambda_ano: f64) -> DualThresholds {
        DualThresholds {
            lambda_normal,
            lambda_ano,
            n_normal: 1,
            n_ano: 1,
            spec: RiskSpec::default(),
        }
    }

    #[test]
    fn rule_application_examples() {
        assert_eq!(predict_set(0.9, &thresholds(0.6, 0.7)), PredictionSet::ANOMALY);
        assert_eq!(predict_set(0.4, &thresholds(0.6, 0.7)), PredictionSet::BOTH);
        assert_eq!(predict_set(0.3, &thresholds(0.2, 0.5)), PredictionSet::EMPTY);
    }

    #[test]
    fn truth_table_on_grid() {
        // Score axis at 1e-3, threshold axes at 1e-2.
        for fi in 0..=1000 {
            let f = fi as f64 * 1e-3;
            for li in 0..=100 {
                let ln = li as f64 * 1e-2;
                for ai in 0..=100 {
                    let la = ai as f64 * 1e-2;
                    let s = predict_set(f, &thresholds(ln, la));
                    assert_eq!(s.contains(0), f < ln);
                    assert_eq!(s.contains(1), f >= 1.0 - la);
                }
            }
        }
    }

    fn row(node_id: usize, p: f64, label: u8, split: Split) -> ScoreRow {
        ScoreRow {
            node_id,
            p_normal: 1.0 - p,
            p_anomaly: p,
            label,
            split,
        }
    }

    #[test]
    fn perfect_detector_gives_singletons() {
        let mut rows = Vec::new();
        for i in 0..100 {
            let label = u8::from(i % 5 == 0);
            let split = if i < 60 { Split::Calib } else { Split::Test };
            rows.push(row(i, f64::from(label), label, split));
        }
        let table = ScoreTable::new(rows).unwrap();
        let t = calibrate_dual(&table, &RiskSpec::default()).unwrap();
        assert_eq!(t.lambda_normal, 1e-9);
        for r in table.in_split(Split::Test) {
            assert_eq!(predict_set(r.p_anomaly, &t).size(), 1);
        }
    }

    #[test]
    fn missing_anomalies_in_calibration_is_an_error() {
        let rows = (0..30).map(|i| row(i, 0.1, 0, Split::Calib)).collect();
        let table = ScoreTable::new(rows).unwrap();
        assert!(matches!(
            calibrate_dual(&table, &RiskSpec::default()),
            Err(Error::MissingClass(NodeClass::Anomalous))
        ));
    }

    #[test]
    fn insufficient_class_is_named() {
        let mut rows: Vec<ScoreRow> = (0..50).map(|i| row(i, 0.1, 0, Split::Calib)).collect();
        rows.extend((50..55).map(|i| row(i, 0.9, 1, Split::Calib)));
        let table = ScoreTable::new(rows).unwrap();
        match calibrate_dual(&table, &RiskSpec::default()) {
            Err(Error::InsufficientCalibration { class, .. }) => assert_eq!(class, NodeClass::Anomalous),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn report_lines_respect_levels() {
        let mut rows = Vec::new();
        for i in 0..400 {
            let label = u8::from(i % 4 == 0);
            let p = ((i * 37) % 100) as f64 / 100.0;
            rows.push(row(i, p, label, Split::Calib));
        }
        let table = ScoreTable::new(rows).unwrap();
        let t = calibrate_dual(&table, &RiskSpec::default()).unwrap();
        let lines = calibration_report(&table, &t).unwrap();
        assert_eq!(lines.len(), 2);
        for l in &lines {
            assert!(l.empirical_risk <= l.alpha - (1.0 - l.alpha) / l.n_calib as f64 + 1e-12);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.csv");
        write_calibration_report(&path, &lines).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(CALIBRATION_HEADER));
        assert_eq!(text.lines().count(), 3);
    }
}
