//! Per-node class probabilities: the interchange format between detectors
//! and calibrators.
//!
//! CSV layout (UTF-8, LF): `node_id,p_normal,p_anomaly,label,split`.
//! Floats are written in shortest round-trip form, so export followed by
//! import reproduces every value bit for bit.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{NodeSplit, Split};
use crate::tensor::{csv_error, Tensor};

pub const SCORE_HEADER: &str = "node_id,p_normal,p_anomaly,label,split";

/// Tolerance on `p_normal + p_anomaly = 1` for stored rows.
const SUM_TOL: f64 = 1e-9;
/// Rows within this distance of unit sum are renormalized on import.
const RENORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub node_id: usize,
    pub p_normal: f64,
    pub p_anomaly: f64,
    pub label: u8,
    pub split: Split,
}

impl ScoreRow {
    pub fn probs(&self) -> [f64; 2] {
        [self.p_normal, self.p_anomaly]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    rows: Vec<ScoreRow>,
}

fn check_row(row: &ScoreRow) -> std::result::Result<(), String> {
    for (name, p) in [("p_normal", row.p_normal), ("p_anomaly", row.p_anomaly)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(format!("{name} = {p} outside [0,1]"));
        }
    }
    if (row.p_normal + row.p_anomaly - 1.0).abs() > SUM_TOL {
        return Err(format!("probabilities sum to {}", row.p_normal + row.p_anomaly));
    }
    if row.label > 1 {
        return Err(format!("label {} not 0/1", row.label));
    }
    Ok(())
}

impl ScoreTable {
    pub fn new(rows: Vec<ScoreRow>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(rows.len());
        for row in &rows {
            check_row(row).map_err(|m| Error::InvalidConfig(format!("node {}: {m}", row.node_id)))?;
            if !ids.insert(row.node_id) {
                return Err(Error::InvalidConfig(format!("duplicate node_id {}", row.node_id)));
            }
        }
        Ok(Self { rows })
    }

    /// Builds a table from an `n×2` probability matrix, with node ids
    /// `0..n`.
    pub fn from_probs(probs: &Tensor, labels: &[u8], split: &NodeSplit) -> Result<Self> {
        if probs.cols() != 2 || probs.rows() != labels.len() || labels.len() != split.len() {
            return Err(Error::shape(
                "score_table",
                format!(
                    "probs {:?}, {} labels, {} split entries",
                    probs.shape(),
                    labels.len(),
                    split.len()
                ),
            ));
        }
        let rows = (0..labels.len())
            .map(|i| ScoreRow {
                node_id: i,
                p_normal: probs.get(i, 0),
                p_anomaly: probs.get(i, 1),
                label: labels[i],
                split: split.assignment[i],
            })
            .collect();
        Self::new(rows)
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ScoreRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Anomaly probabilities as an `n×1` column, in row order.
    pub fn anomaly_column(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.p_anomaly).collect()
    }

    /// Copy with split assignments replaced (row order preserved).
    pub fn with_splits(&self, splits: &[Split]) -> Result<Self> {
        if splits.len() != self.rows.len() {
            return Err(Error::shape("with_splits", "split vector length differs"));
        }
        let rows = self
            .rows
            .iter()
            .zip(splits)
            .map(|(r, &split)| ScoreRow { split, ..*r })
            .collect();
        Ok(Self { rows })
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        (|| -> std::io::Result<()> {
            writeln!(w, "{SCORE_HEADER}")?;
            for r in &self.rows {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    r.node_id, r.p_normal, r.p_anomaly, r.label, r.split
                )?;
            }
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))
    }

    pub fn import_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let header = reader.headers().map_err(|e| csv_error(path, e))?;
        if header.iter().collect::<Vec<_>>().join(",") != SCORE_HEADER {
            return Err(Error::parse(path, 1, format!("header must be `{SCORE_HEADER}`")));
        }
        let mut rows = Vec::new();
        let mut ids = HashSet::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let err = |m: String| Error::parse(path, line, m);
            if rec.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", rec.len())));
            }
            let node_id: usize = rec[0].parse().map_err(|e| err(format!("node_id: {e}")))?;
            let prob = |s: &str| s.parse::<f64>().map_err(|e| err(format!("probability `{s}`: {e}")));
            let (mut p0, mut p1) = (prob(&rec[1])?, prob(&rec[2])?);
            let label = match &rec[3] {
                "0" => 0,
                "1" => 1,
                other => return Err(err(format!("label `{other}` not 0/1"))),
            };
            let split: Split = rec[4].parse().map_err(err)?;
            for p in [p0, p1] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(err(format!("probability {p} outside [0,1]")));
                }
            }
            let sum = p0 + p1;
            if (sum - 1.0).abs() > RENORM_TOL {
                return Err(err(format!("probabilities sum to {sum}")));
            }
            if (sum - 1.0).abs() > SUM_TOL {
                p0 /= sum;
                p1 /= sum;
            }
            if !ids.insert(node_id) {
                return Err(err(format!("duplicate node_id {node_id}")));
            }
            rows.push(ScoreRow {
                node_id,
                p_normal: p0,
                p_anomaly: p1,
                label,
                split,
            });
        }
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn valid_row_is_accepted() {
        let (_d, p) = write(&format!("{SCORE_HEADER}\n3,0.2,0.8,1,Calib\n"));
        let t = ScoreTable::import_csv(&p).unwrap();
        assert_eq!(t.rows()[0].p_anomaly, 0.8);
        assert_eq!(t.rows()[0].split, Split::Calib);
    }

    #[test]
    fn bad_sum_is_rejected() {
        let (_d, p) = write(&format!("{SCORE_HEADER}\n3,0.2,0.9,1,Calib\n"));
        let msg = ScoreTable::import_csv(&p).unwrap_err().to_string();
        assert!(msg.contains("sum to 1.1"), "{msg}");
    }

    #[test]
    fn near_unit_sum_is_renormalized() {
        let (_d, p) = write(&format!("{SCORE_HEADER}\n0,0.2000005,0.8,0,Test\n"));
        let r = ScoreTable::import_csv(&p).unwrap().rows()[0];
        assert!((r.p_normal + r.p_anomaly - 1.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_probability_is_rejected() {
        let (_d, p) = write(&format!("{SCORE_HEADER}\n0,-0.1,1.1,0,Test\n"));
        assert!(ScoreTable::import_csv(&p).is_err());
    }

    #[test]
    fn duplicate_node_is_rejected() {
        let (_d, p) = write(&format!("{SCORE_HEADER}\n3,0.2,0.8,1,Calib\n3,0.5,0.5,0,Test\n"));
        assert!(ScoreTable::import_csv(&p)
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
    }

    #[test]
    fn wrong_header_is_rejected() {
        let (_d, p) = write("node,p0,p1,label,split\n");
        assert!(ScoreTable::import_csv(&p).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = ScoreTable::import_csv(Path::new("/nonexistent/scores.csv")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn empty_table_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        ScoreTable::default().export_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), format!("{SCORE_HEADER}\n"));
        assert!(ScoreTable::import_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn large_table_streams() {
        let rows = (0..1_000_000)
            .map(|i| ScoreRow {
                node_id: i,
                p_normal: 0.25,
                p_anomaly: 0.75,
                label: (i % 2) as u8,
                split: Split::Test,
            })
            .collect();
        let t = ScoreTable::new(rows).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.csv");
        t.export_csv(&path).unwrap();
        assert_eq!(ScoreTable::import_csv(&path).unwrap().len(), 1_000_000);
    }

    proptest! {
        #[test]
        fn export_import_round_trips(probs in prop::collection::vec(0.0f64..=1.0, 0..60), seed in any::<u64>()) {
            let rows: Vec<ScoreRow> = probs
                .iter()
                .enumerate()
                .map(|(i, &p1)| ScoreRow {
                    node_id: i * 7 + (seed % 5) as usize,
                    p_normal: 1.0 - p1,
                    p_anomaly: p1,
                    label: ((seed >> (i % 64)) & 1) as u8,
                    split: Split::ALL[i % 3],
                })
                .collect();
            let t = ScoreTable::new(rows).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("s.csv");
            t.export_csv(&path).unwrap();
            prop_assert_eq!(ScoreTable::import_csv(&path).unwrap(), t);
        }
    }
}
