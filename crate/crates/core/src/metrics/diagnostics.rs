use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::conformal::{NodeClass, PredictionSet};
use crate::detector::ScoreTable;
use crate::error::{Error, Result};
use crate::graph::{Graph, Split};

/// Which nodes count as the neighborhood of `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Neighborhood {
    /// `N(v) ∪ {v}`.
    #[default]
    Closed,
    /// `N(v)`; an isolated node has entropy 0.
    Open,
}

/// Shannon entropy (natural log) of the set-size distribution over each
/// node's neighborhood.
pub fn neighborhood_inefficiency_entropy(g: &Graph, sets: &[PredictionSet], hood: Neighborhood) -> Result<Vec<f64>> {
    if sets.len() != g.num_nodes() {
        return Err(Error::shape("neighborhood_entropy", "one set per node required"));
    }
    Ok((0..g.num_nodes())
        .map(|v| {
            let mut hist = [0usize; 3];
            for &u in g.neighbors(v) {
                hist[sets[u].size()] += 1;
            }
            if hood == Neighborhood::Closed {
                hist[sets[v].size()] += 1;
            }
            let total: usize = hist.iter().sum();
            hist.iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / total as f64;
                    -p * p.ln()
                })
                .sum::<f64>()
                .max(0.0)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    /// Mean predicted probability of the class; `NaN`-free, 0 for empty bins.
    pub confidence: f64,
    /// Fraction of binned nodes whose label is the class.
    pub accuracy: f64,
    pub count: usize,
}

/// One-vs-rest reliability bins for `class`: nodes are binned by their
/// predicted probability of `class` on `n_bins` equal-width bins over
/// `[0, 1]`. `split` restricts the nodes considered.
pub fn reliability_diagram(
    table: &ScoreTable,
    class: NodeClass,
    n_bins: usize,
    split: Option<Split>,
) -> Result<Vec<ReliabilityBin>> {
    if n_bins < 2 {
        return Err(Error::InvalidConfig(format!("n_bins = {n_bins} must be >= 2")));
    }
    let mut conf = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for r in table.rows().iter().filter(|r| split.is_none_or(|s| r.split == s)) {
        let p = r.probs()[usize::from(class.label())];
        let b = ((p * n_bins as f64) as usize).min(n_bins - 1);
        conf[b] += p;
        count[b] += 1;
        hits[b] += usize::from(r.label == class.label());
    }
    Ok((0..n_bins)
        .map(|b| {
            let c = count[b];
            ReliabilityBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                confidence: if c > 0 { conf[b] / c as f64 } else { 0.0 },
                accuracy: if c > 0 { hits[b] as f64 / c as f64 } else { 0.0 },
                count: c,
            }
        })
        .collect())
}

/// Area under the ROC curve via the rank statistic, with ties averaged.
/// `None` when either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 || scores.len() != labels.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64 * avg;
        i = j + 1;
    }
    Some((rank_sum - (n1 * (n1 + 1)) as f64 / 2.0) / (n0 * n1) as f64)
}

pub fn write_reliability_csv(path: &Path, class: NodeClass, bins: &[ReliabilityBin]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "class,bin_lower,bin_upper,confidence,accuracy,count")?;
        for b in bins {
            writeln!(
                w,
                "{class},{},{},{},{},{}",
                b.lower, b.upper, b.confidence, b.accuracy, b.count
            )?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

pub fn write_entropy_csv(path: &Path, sets: &[PredictionSet], entropy: &[f64]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "node_id,set_size,entropy")?;
        for (i, (s, h)) in sets.iter().zip(entropy).enumerate() {
            writeln!(w, "{i},{},{h}", s.size())?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}
