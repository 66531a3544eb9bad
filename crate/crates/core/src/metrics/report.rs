use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::conformal::PredictionSet;
use crate::error::{Error, Result};
use crate::tensor::csv_error;

pub const METRICS_HEADER: &str = "method,Cov,Ine,Amb,Single,FNR,FPR";

/// Raw tallies behind a [`MetricsReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SetCounts {
    pub n: usize,
    pub n_normal: usize,
    pub n_ano: usize,
    pub empty: usize,
    pub singleton: usize,
    pub both: usize,
    pub covered: usize,
    /// Anomalous nodes whose set excludes 1.
    pub false_negatives: usize,
    /// Normal nodes whose set excludes 0.
    pub false_positives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub coverage: f64,
    pub inefficiency: f64,
    pub ambiguity: f64,
    pub singleton_rate: f64,
    pub empty_rate: f64,
    /// `None` when no anomalous node was evaluated.
    pub set_fnr: Option<f64>,
    /// `None` when no normal node was evaluated.
    pub set_fpr: Option<f64>,
    pub counts: SetCounts,
}

impl MetricsReport {
    fn from_counts(c: SetCounts) -> Self {
        let n = c.n as f64;
        let rate = |k: usize, d: usize| (d > 0).then(|| k as f64 / d as f64);
        Self {
            coverage: c.covered as f64 / n,
            inefficiency: (2 * c.both + c.singleton) as f64 / n,
            ambiguity: c.both as f64 / n,
            singleton_rate: c.singleton as f64 / n,
            empty_rate: c.empty as f64 / n,
            set_fnr: rate(c.false_negatives, c.n_ano),
            set_fpr: rate(c.false_positives, c.n_normal),
            counts: c,
        }
    }

    /// Checks the size decomposition and the coverage/error decomposition.
    /// The count identities are exact; the rate identities hold to 1e-12.
    pub fn identities_hold(&self) -> bool {
        let c = &self.counts;
        let counts_ok = c.empty + c.singleton + c.both == c.n
            && c.n_normal + c.n_ano == c.n
            && c.covered + c.false_negatives + c.false_positives == c.n;
        let n = c.n as f64;
        let ine = (self.inefficiency - (2.0 * self.ambiguity + self.singleton_rate)).abs() <= 1e-12;
        let parts = (self.ambiguity + self.singleton_rate + self.empty_rate - 1.0).abs() <= 1e-12;
        let miss =
            c.n_ano as f64 / n * self.set_fnr.unwrap_or(0.0) + c.n_normal as f64 / n * self.set_fpr.unwrap_or(0.0);
        let cov = (self.coverage - (1.0 - miss)).abs() <= 1e-12;
        counts_ok && ine && parts && cov
    }

    /// `Cov,Ine,Amb,Single,FNR,FPR` with undefined rates as `NA`.
    pub fn csv_fields(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        format!(
            "{},{},{},{},{},{}",
            self.coverage,
            self.inefficiency,
            self.ambiguity,
            self.singleton_rate,
            opt(self.set_fnr),
            opt(self.set_fpr)
        )
    }
}

/// Metrics over the nodes selected by `filter` (all nodes when `None`).
pub fn evaluate_sets(sets: &[PredictionSet], labels: &[u8], filter: Option<&[bool]>) -> Result<MetricsReport> {
    if sets.len() != labels.len() || filter.is_some_and(|f| f.len() != sets.len()) {
        return Err(Error::shape("evaluate_sets", "sets, labels and filter must align"));
    }
    let mut c = SetCounts::default();
    for (i, (&s, &y)) in sets.iter().zip(labels).enumerate() {
        if filter.is_some_and(|f| !f[i]) {
            continue;
        }
        c.n += 1;
        match s.size() {
            0 => c.empty += 1,
            1 => c.singleton += 1,
            _ => c.both += 1,
        }
        if s.contains(y) {
            c.covered += 1;
        } else if y == 1 {
            c.false_negatives += 1;
        } else {
            c.false_positives += 1;
        }
        if y == 1 {
            c.n_ano += 1;
        } else {
            c.n_normal += 1;
        }
    }
    if c.n == 0 {
        return Err(Error::InvalidConfig("metric filter selects no nodes".into()));
    }
    Ok(MetricsReport::from_counts(c))
}

pub fn write_metrics_csv(path: &Path, rows: &[(String, MetricsReport)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "{METRICS_HEADER}")?;
        for (method, r) in rows {
            writeln!(w, "{method},{}", r.csv_fields())?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// One parsed metrics line: the method name and its six values, with `NA`
/// read as `None`.
pub type MetricsLine = (String, [Option<f64>; 6]);

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsLine>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
        return Err(Error::parse(path, 1, format!("header must be `{METRICS_HEADER}`")));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let mut vals = [None; 6];
        for (k, v) in vals.iter_mut().enumerate() {
            let field = &rec[k + 1];
            if field != "NA" {
                *v = Some(
                    field
                        .parse()
                        .map_err(|e| Error::parse(path, i + 2, format!("`{field}`: {e}")))?,
                );
            }
        }
        out.push((rec[0].to_string(), vals));
    }
    Ok(out)
}
