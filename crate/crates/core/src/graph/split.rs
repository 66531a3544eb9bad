use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Calib,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Calib, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "Train",
            Split::Calib => "Calib",
            Split::Test => "Test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "Train" => Ok(Split::Train),
            "Calib" => Ok(Split::Calib),
            "Test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub calib: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, calib: f64, test: f64) -> Result<Self> {
        let r = Self { train, calib, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.calib, self.test];
        if parts.iter().any(|&p| !(p > 0.0 && p < 1.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split ratios {parts:?} must be positive and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Assignment of every node to exactly one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSplit {
    pub assignment: Vec<Split>,
    pub seed: u64,
}

impl NodeSplit {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

/// Per-class stratified random split of a label vector.
///
/// Within each class the nodes are shuffled and cut at
/// `round(train·n_c)` and `round(calib·n_c)`; the remainder goes to test.
pub fn split_labels(labels: &[u8], ratios: SplitRatios, seed: u64) -> Result<NodeSplit> {
    ratios.validate()?;
    let mut assignment = vec![Split::Test; labels.len()];
    for class in 0..=1u8 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let n_c = members.len();
        let n_train = (ratios.train * n_c as f64).round() as usize;
        let n_calib = (ratios.calib * n_c as f64).round() as usize;
        if n_train == 0 || n_calib == 0 || n_train + n_calib >= n_c {
            return Err(Error::InfeasibleSplit(format!(
                "class {class} has {n_c} nodes; ratios {:?} leave some split without it",
                (ratios.train, ratios.calib, ratios.test)
            )));
        }
        members.shuffle(&mut stream(seed, &[0x5917, class as u64]));
        for (pos, &node) in members.iter().enumerate() {
            assignment[node] = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_calib {
                Split::Calib
            } else {
                Split::Test
            };
        }
    }
    Ok(NodeSplit { assignment, seed })
}

pub fn split_nodes(g: &Graph, ratios: SplitRatios, seed: u64) -> Result<NodeSplit> {
    split_labels(g.labels(), ratios, seed)
}
