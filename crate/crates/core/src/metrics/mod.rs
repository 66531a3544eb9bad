//! Set-level evaluation metrics and two diagnostics: per-class reliability
//! bins and neighborhood set-size entropy.

mod diagnostics;
mod report;

pub use diagnostics::{
    neighborhood_inefficiency_entropy, reliability_diagram, roc_auc, write_entropy_csv, write_reliability_csv,
    Neighborhood, ReliabilityBin,
};
pub use report::{
    evaluate_sets, read_metrics_csv, write_metrics_csv, MetricsLine, MetricsReport, SetCounts, METRICS_HEADER,
};
