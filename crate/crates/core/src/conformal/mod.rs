//! Conformal calibration: class-conditional risk control with two
//! thresholds, and split-conformal baselines.

mod baselines;
mod dual;
mod risk;
mod sets;

pub use baselines::{
    conformal_quantile, cp_calibrate_and_predict, cp_score, cp_score_with, CpMethod, CpOutcome, CpSettings,
};
pub use dual::{
    anomaly_side_set, calibrate_dual, calibrate_dual_scores, calibration_report, normal_side_set, predict_set,
    write_calibration_report, CalibrationLine, DualThresholds, CALIBRATION_HEADER,
};
pub use risk::{adjusted_level, calibrate_threshold, empirical_risk, set_miss, NodeClass, RiskSpec};
pub use sets::PredictionSet;
