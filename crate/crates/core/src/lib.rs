//! Calibrated prediction sets for graph anomaly detection.
//!
//! A base scorer assigns every node an anomaly probability. Two
//! class-conditional thresholds, calibrated on held-out nodes, turn those
//! probabilities into prediction sets over `{0, 1}` whose set-based false
//! negative and false positive rates are bounded in expectation. A spectral
//! calibrator can re-score nodes before calibration to shrink the sets.

pub mod conformal;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod rng;
pub mod ssgnc;
pub mod tensor;

pub use conformal::{calibrate_dual, predict_set, DualThresholds, NodeClass, PredictionSet, RiskSpec};
pub use detector::{ScoreRow, ScoreTable};
pub use error::{Error, Result};
pub use experiment::ExperimentConfig;
pub use graph::{Graph, NodeSplit, Split, SplitRatios, SynthConfig};
pub use metrics::MetricsReport;
pub use tensor::{SparseMatrix, Tensor};
