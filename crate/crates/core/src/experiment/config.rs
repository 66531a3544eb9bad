//! Flat `section.key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors. Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::conformal::{CpSettings, RiskSpec};
use crate::detector::DetectorHyper;
use crate::error::{Error, Result};
use crate::graph::{SplitRatios, SynthConfig};
use crate::metrics::Neighborhood;
use crate::ssgnc::{HybridLossSpec, SsgncConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Files {
        edges: PathBuf,
        nodes: PathBuf,
    },
    /// A score table with its own split column; no graph is available.
    Scores(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub risk: RiskSpec,
    pub cp_alpha: f64,
    pub cp: CpSettings,
    pub detector: DetectorHyper,
    pub ssgnc_enabled: bool,
    pub ssgnc: SsgncConfig,
    pub loss: HybridLossSpec,
    pub trials: usize,
    pub workers: usize,
    pub neighborhood: Neighborhood,
    pub reliability_bins: usize,
    pub output: PathBuf,
    /// Seed for the node split; falls back to `seed`.
    pub split_seed: Option<u64>,
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Prototypes,
    /// Sets both risk targets to the swept value.
    Alpha,
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "prototypes" => Ok(SweepAxis::Prototypes),
            "alpha" => Ok(SweepAxis::Alpha),
            other => Err(format!("sweep axis must be prototypes|alpha, found `{other}`")),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Prototypes => "prototypes",
            SweepAxis::Alpha => "alpha",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Parses a comma-separated value list; an empty list is an error.
pub fn parse_sweep_values(raw: &str) -> std::result::Result<Vec<f64>, String> {
    let values = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| format!("sweep value `{s}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("sweep value list is empty".into());
    }
    Ok(values)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic(SynthConfig::default()),
            seed: 0,
            ratios: SplitRatios {
                train: 0.3,
                calib: 0.5,
                test: 0.2,
            },
            risk: RiskSpec::default(),
            cp_alpha: 0.1,
            cp: CpSettings::default(),
            detector: DetectorHyper::default(),
            ssgnc_enabled: true,
            ssgnc: SsgncConfig::default(),
            loss: HybridLossSpec::default(),
            trials: 500,
            workers: 0,
            neighborhood: Neighborhood::Closed,
            reliability_bins: 10,
            output: PathBuf::from("out"),
            split_seed: None,
            sweep: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| format!("`{key}`: cannot parse `{raw}`: {e}"))
}

impl ExperimentConfig {
    /// Reads, parses and validates a config file, then checks that every
    /// referenced input exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e).in_stage("config"))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, base).map_err(|(line, msg)| Error::parse(path, line, msg).in_stage("config"))?;
        cfg.validate().map_err(|e| e.in_stage("config"))?;
        cfg.check_inputs()?;
        Ok(cfg)
    }

    /// Copy with the experiment seed replaced everywhere it is consumed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.detector.seed = seed;
        self
    }

    /// Seed used for the Train/Calib/Test split.
    pub fn effective_split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic(s) = &self.source {
            s.validate()?;
        }
        self.ratios.validate()?;
        self.risk.validate()?;
        if !(self.cp_alpha > 0.0 && self.cp_alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "cp.alpha = {} must lie in (0, 1)",
                self.cp_alpha
            )));
        }
        self.cp.validate()?;
        self.detector.validate()?;
        self.ssgnc.validate()?;
        self.loss.validate()?;
        if self.reliability_bins < 2 {
            return Err(Error::InvalidConfig("metrics.reliability_bins must be >= 2".into()));
        }
        Ok(())
    }

    /// Missing inputs are I/O errors attributed to the stage that reads them.
    pub fn check_inputs(&self) -> Result<()> {
        let exists = |p: &Path, stage: &'static str| {
            std::fs::metadata(p)
                .map(|_| ())
                .map_err(|e| Error::io(p, e).in_stage(stage))
        };
        match &self.source {
            DataSource::Synthetic(_) => Ok(()),
            DataSource::Files { edges, nodes } => {
                exists(edges, "load")?;
                exists(nodes, "load")
            }
            DataSource::Scores(p) => exists(p, "import"),
        }
    }

    /// Parses config text; relative paths resolve against `base`. Errors
    /// carry the 1-based line number (0 for whole-file problems).
    pub fn parse(text: &str, base: &Path) -> std::result::Result<Self, (usize, String)> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or((i + 1, format!("expected `section.key = value`, found `{line}`")))?;
            let key = k.trim().to_string();
            if !key.contains('.') {
                return Err((i + 1, format!("key `{key}` must be namespaced as section.key")));
            }
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err((i + 1, format!("duplicate key `{key}`")));
            }
        }

        let mut cfg = Self::default();
        let mut synth = SynthConfig::default();
        let mut source_kind = "synthetic".to_string();
        let mut edges = None;
        let mut nodes = None;
        let mut scores = None;
        let mut ssgnc_enabled = None;
        let mut sweep_axis: Option<(usize, SweepAxis)> = None;
        let mut sweep_values: Option<(usize, Vec<f64>)> = None;
        let resolve = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };

        for (key, (line, v)) in &entries {
            let line = *line;
            let at = |r: std::result::Result<(), String>| r.map_err(|m| (line, m));
            match key.as_str() {
                "data.source" => source_kind = v.clone(),
                "data.edges" => edges = Some(resolve(v)),
                "data.nodes" => nodes = Some(resolve(v)),
                "data.scores" => scores = Some(resolve(v)),
                "synth.n" => at(parse_value(key, v).map(|x| synth.n = x))?,
                "synth.d" => at(parse_value(key, v).map(|x| synth.d = x))?,
                "synth.anomaly_rate" => at(parse_value(key, v).map(|x| synth.anomaly_rate = x))?,
                "synth.intra_p" => at(parse_value(key, v).map(|x| synth.intra_p = x))?,
                "synth.inter_p" => at(parse_value(key, v).map(|x| synth.inter_p = x))?,
                "synth.feature_shift" => at(parse_value(key, v).map(|x| synth.feature_shift = x))?,
                "synth.heterophily" => at(parse_value(key, v).map(|x| synth.heterophily = x))?,
                "split.train" => at(parse_value(key, v).map(|x| cfg.ratios.train = x))?,
                "split.calib" => at(parse_value(key, v).map(|x| cfg.ratios.calib = x))?,
                "split.test" => at(parse_value(key, v).map(|x| cfg.ratios.test = x))?,
                "split.seed" => at(parse_value(key, v).map(|x| cfg.split_seed = Some(x)))?,
                "experiment.seed" => at(parse_value(key, v).map(|x| cfg.seed = x))?,
                "experiment.trials" => at(parse_value(key, v).map(|x| cfg.trials = x))?,
                "experiment.workers" => at(parse_value(key, v).map(|x| cfg.workers = x))?,
                "experiment.output" => cfg.output = resolve(v),
                "risk.alpha_fnr" => at(parse_value(key, v).map(|x| cfg.risk.alpha_fnr = x))?,
                "risk.alpha_fpr" => at(parse_value(key, v).map(|x| cfg.risk.alpha_fpr = x))?,
                "risk.bound" => at(parse_value(key, v).map(|x| cfg.risk.bound = x))?,
                "risk.delta" => at(parse_value(key, v).map(|x| cfg.risk.delta = x))?,
                "cp.alpha" => at(parse_value(key, v).map(|x| cfg.cp_alpha = x))?,
                "cp.k_reg" => at(parse_value(key, v).map(|x| cfg.cp.k_reg = x))?,
                "cp.lambda_reg" => at(parse_value(key, v).map(|x| cfg.cp.lambda_reg = x))?,
                "cp.randomized" => at(parse_value(key, v).map(|x| cfg.cp.randomized = x))?,
                "detector.hidden" => at(parse_value(key, v).map(|x| cfg.detector.hidden = x))?,
                "detector.epochs" => at(parse_value(key, v).map(|x| cfg.detector.epochs = x))?,
                "detector.lr" => at(parse_value(key, v).map(|x| cfg.detector.lr = x))?,
                "detector.dropout" => at(parse_value(key, v).map(|x| cfg.detector.dropout = x))?,
                "ssgnc.enabled" => at(parse_value(key, v).map(|x| ssgnc_enabled = Some(x)))?,
                "ssgnc.prototypes" => at(parse_value(key, v).map(|x| cfg.ssgnc.prototypes = x))?,
                "ssgnc.cheb_order" => at(parse_value(key, v).map(|x| cfg.ssgnc.cheb_order = x))?,
                "ssgnc.layers" => at(parse_value(key, v).map(|x| cfg.ssgnc.layers = x))?,
                "ssgnc.route_iters" => at(parse_value(key, v).map(|x| cfg.ssgnc.route_iters = x))?,
                "ssgnc.beta" => at(parse_value(key, v).map(|x| cfg.ssgnc.beta = x))?,
                "ssgnc.epsilon" => at(parse_value(key, v).map(|x| cfg.ssgnc.epsilon = x))?,
                "ssgnc.hidden" => at(parse_value(key, v).map(|x| cfg.ssgnc.hidden = x))?,
                "ssgnc.dropout" => at(parse_value(key, v).map(|x| cfg.ssgnc.dropout = x))?,
                "ssgnc.lr" => at(parse_value(key, v).map(|x| cfg.ssgnc.lr = x))?,
                "ssgnc.weight_decay" => at(parse_value(key, v).map(|x| cfg.ssgnc.weight_decay = x))?,
                "ssgnc.epochs" => at(parse_value(key, v).map(|x| cfg.ssgnc.epochs = x))?,
                "ssgnc.select_best" => at(parse_value(key, v).map(|x| cfg.ssgnc.select_best = x))?,
                "ssgnc.rescale_spectrum" => at(parse_value(key, v).map(|x| cfg.ssgnc.rescale_spectrum = x))?,
                "ssgnc.use_detector_scores" => at(parse_value(key, v).map(|x| cfg.ssgnc.use_detector_scores = x))?,
                "ssgnc.internal_fraction" => at(parse_value(key, v).map(|x| cfg.ssgnc.internal_fraction = x))?,
                "loss.gamma" => at(parse_value(key, v).map(|x| cfg.loss.gamma = x))?,
                "loss.tau" => at(parse_value(key, v).map(|x| cfg.loss.tau = x))?,
                "loss.refresh_every" => at(parse_value(key, v).map(|x| cfg.loss.refresh_every = x))?,
                "loss.class_weights" => {
                    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                    if parts.len() != 2 {
                        return Err((line, format!("`{key}` expects two comma-separated weights")));
                    }
                    let w0: f64 = parse_value(key, parts[0]).map_err(|m| (line, m))?;
                    let w1: f64 = parse_value(key, parts[1]).map_err(|m| (line, m))?;
                    cfg.loss.class_weights = Some([w0, w1]);
                }
                "metrics.neighborhood" => {
                    cfg.neighborhood = match v.as_str() {
                        "closed" => Neighborhood::Closed,
                        "open" => Neighborhood::Open,
                        other => return Err((line, format!("`{key}`: expected closed|open, found `{other}`"))),
                    }
                }
                "metrics.reliability_bins" => at(parse_value(key, v).map(|x| cfg.reliability_bins = x))?,
                "sweep.axis" => sweep_axis = Some((line, v.parse().map_err(|m| (line, m))?)),
                "sweep.values" => sweep_values = Some((line, parse_sweep_values(v).map_err(|m| (line, m))?)),
                other => return Err((line, format!("unknown key `{other}`"))),
            }
        }

        let line_of = |k: &str| entries.get(k).map_or(0, |(l, _)| *l);
        cfg.source = match source_kind.as_str() {
            "synthetic" => DataSource::Synthetic(synth),
            "files" => match (edges, nodes) {
                (Some(edges), Some(nodes)) => DataSource::Files { edges, nodes },
                _ => {
                    return Err((
                        line_of("data.source"),
                        "data.source = files needs data.edges and data.nodes".into(),
                    ))
                }
            },
            "scores" => match scores {
                Some(p) => DataSource::Scores(p),
                None => return Err((line_of("data.source"), "data.source = scores needs data.scores".into())),
            },
            other => {
                return Err((
                    line_of("data.source"),
                    format!("data.source must be synthetic|files|scores, found `{other}`"),
                ))
            }
        };
        let has_graph = !matches!(cfg.source, DataSource::Scores(_));
        cfg.ssgnc_enabled = match ssgnc_enabled {
            Some(true) if !has_graph => {
                return Err((
                    line_of("ssgnc.enabled"),
                    "the calibrator needs a graph; data.source = scores has none".into(),
                ))
            }
            Some(v) => v,
            None => has_graph,
        };
        cfg.detector.seed = cfg.seed;
        cfg.sweep = match (sweep_axis, sweep_values) {
            (None, None) => None,
            (Some((_, axis)), Some((_, values))) => Some(SweepSpec { axis, values }),
            (Some((line, _)), None) | (None, Some((line, _))) => {
                return Err((line, "sweep.axis and sweep.values must be given together".into()))
            }
        };
        Ok(cfg)
    }
}
