//! Run configuration in a plain `key = value` format, one field per line.
//!
//! ```text
//! # hyperparameters
//! architecture = mlp-mnist
//! dataset = mnist
//! data_dir = data/mnist
//! batch_size = 64
//! learning_rate = 0.001
//! clusterability_factor = 20
//! num_clusters = 4
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bsgc::SimilaritySource;
use crate::error::{Error, Result};
use crate::evaluation::{DEFAULT_GUARD_DELTA, DEFAULT_PRUNE_FRACTION};
use crate::net::{Architecture, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    /// Seeded Gaussian blobs shaped for the architecture's input.
    Synthetic,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Synthetic => "synthetic",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "mnist" => Some(DatasetKind::Mnist),
            "cifar10" | "cifar-10" | "cifar" => Some(DatasetKind::Cifar10),
            "synthetic" | "blobs" => Some(DatasetKind::Synthetic),
            _ => None,
        }
    }
}

/// Which linear layer gets clustered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSelector {
    /// The second-to-last linear layer (`fc2` for both built-in architectures).
    Penultimate,
    /// The n-th linear layer, 1-based (`fc1`, `fc2`, ...).
    Fc(usize),
    /// A raw index into the layer list.
    Index(usize),
}

impl LayerSelector {
    pub fn parse(s: &str) -> Option<Self> {
        if s == "penultimate" {
            return Some(LayerSelector::Penultimate);
        }
        if let Some(n) = s.strip_prefix("fc") {
            return n.parse().ok().filter(|&n| n >= 1).map(LayerSelector::Fc);
        }
        s.parse().ok().map(LayerSelector::Index)
    }

    pub fn resolve(self, net: &Network) -> Result<usize> {
        let linear = net.linear_layer_indices();
        let idx = match self {
            LayerSelector::Penultimate if linear.len() >= 2 => linear[linear.len() - 2],
            LayerSelector::Penultimate => {
                return Err(Error::Config("network has fewer than two linear layers".into()));
            }
            LayerSelector::Fc(n) => *linear
                .get(n - 1)
                .ok_or_else(|| Error::Config(format!("fc{n} requested but network has {} linear layers", linear.len())))?,
            LayerSelector::Index(i) => i,
        };
        if net.linear(idx).is_none() {
            return Err(Error::Config(format!("layer {idx} is not a linear layer")));
        }
        Ok(idx)
    }
}

impl std::fmt::Display for LayerSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerSelector::Penultimate => f.write_str("penultimate"),
            LayerSelector::Fc(n) => write!(f, "fc{n}"),
            LayerSelector::Index(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    /// Use only the first n training / test examples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub synthetic_train_per_class: usize,
    pub synthetic_test_per_class: usize,
    pub synthetic_spread: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub k: usize,
    pub warmup_epochs: usize,
    pub main_epochs: usize,
    pub seed: u64,
    pub clustered_layer: LayerSelector,
    pub similarity: SimilaritySource,
    pub evaluate: bool,
    pub guard_delta: f64,
    pub prune_fraction: f64,
    /// Labels whose circuits are measured; `None` means every class.
    pub ecs_labels: Option<Vec<usize>>,
    /// λ = 0 epochs for the model analysed by `sweep-k`.
    pub plain_epochs: usize,
    pub sweep_k: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            architecture: Architecture::MlpMnist,
            dataset: DatasetKind::Mnist,
            data_dir: PathBuf::from("data/mnist"),
            train_limit: None,
            test_limit: None,
            synthetic_train_per_class: 200,
            synthetic_test_per_class: 50,
            synthetic_spread: 0.1,
            batch_size: 64,
            learning_rate: 1e-3,
            lambda: 20.0,
            k: 4,
            warmup_epochs: 1,
            main_epochs: 10,
            seed: 0,
            clustered_layer: LayerSelector::Penultimate,
            similarity: SimilaritySource::Weight,
            evaluate: true,
            guard_delta: DEFAULT_GUARD_DELTA,
            prune_fraction: DEFAULT_PRUNE_FRACTION,
            ecs_labels: None,
            plain_epochs: 3,
            sweep_k: (2..=8).collect(),
        }
    }
}

fn parse_list(value: &str) -> Option<Vec<usize>> {
    if let Some((a, b)) = value.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        return (a <= b).then(|| (a..=b).collect());
    }
    value.split(',').map(|p| p.trim().parse().ok()).collect()
}

fn join(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_limit(value: &str) -> Option<Option<usize>> {
    match value {
        "all" | "none" | "0" => Some(None),
        v => v.parse().ok().map(Some),
    }
}

fn limit_text(limit: Option<usize>) -> String {
    limit.map_or_else(|| "all".to_string(), |n| n.to_string())
}

impl TrainConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = || Error::Config(format!("invalid value {value:?} for {key}"));
        fn num<T: std::str::FromStr>(v: &str) -> Option<T> {
            v.parse().ok()
        }
        match key.trim() {
            "architecture" => self.architecture = Architecture::from_name(value).ok_or_else(bad)?,
            "dataset" => self.dataset = DatasetKind::from_name(value).ok_or_else(bad)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "train_limit" => self.train_limit = parse_limit(value).ok_or_else(bad)?,
            "test_limit" => self.test_limit = parse_limit(value).ok_or_else(bad)?,
            "synthetic_train_per_class" => self.synthetic_train_per_class = num(value).ok_or_else(bad)?,
            "synthetic_test_per_class" => self.synthetic_test_per_class = num(value).ok_or_else(bad)?,
            "synthetic_spread" => self.synthetic_spread = num(value).ok_or_else(bad)?,
            "batch_size" => self.batch_size = num(value).ok_or_else(bad)?,
            "optimizer" if value.eq_ignore_ascii_case("adam") => {}
            "criterion" if value.eq_ignore_ascii_case("cross-entropy") => {}
            "learning_rate" | "lr" => self.learning_rate = num(value).ok_or_else(bad)?,
            "clusterability_factor" | "lambda" => self.lambda = num(value).ok_or_else(bad)?,
            "num_clusters" | "k" => self.k = num(value).ok_or_else(bad)?,
            "warmup_epochs" => self.warmup_epochs = num(value).ok_or_else(bad)?,
            "main_epochs" => self.main_epochs = num(value).ok_or_else(bad)?,
            "seed" => self.seed = num(value).ok_or_else(bad)?,
            "clustered_layer" => self.clustered_layer = LayerSelector::parse(value).ok_or_else(bad)?,
            "similarity" => self.similarity = SimilaritySource::from_name(value).ok_or_else(bad)?,
            "evaluate" => self.evaluate = num(value).ok_or_else(bad)?,
            "guard_delta" => self.guard_delta = num(value).ok_or_else(bad)?,
            "prune_fraction" => self.prune_fraction = num(value).ok_or_else(bad)?,
            "ecs_labels" if value == "all" => self.ecs_labels = None,
            "ecs_labels" => self.ecs_labels = Some(parse_list(value).ok_or_else(bad)?),
            "plain_epochs" => self.plain_epochs = num(value).ok_or_else(bad)?,
            "sweep_k" => self.sweep_k = parse_list(value).ok_or_else(bad)?,
            "optimizer" | "criterion" => return Err(bad()),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides on top of `self`.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parses a config on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        TrainConfig::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.k == 0 {
            return fail("num_clusters must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("clusterability_factor must be finite and non-negative, got {}", self.lambda));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.prune_fraction > 0.0 && self.prune_fraction <= 1.0) {
            return fail(format!("prune_fraction must be in (0, 1], got {}", self.prune_fraction));
        }
        if !(self.guard_delta >= 0.0) {
            return fail(format!("guard_delta must be non-negative, got {}", self.guard_delta));
        }
        if self.architecture == Architecture::Custom {
            return fail("architecture must be mlp-mnist or cnn-cifar".into());
        }
        if self.dataset == DatasetKind::Synthetic
            && (self.synthetic_train_per_class == 0 || self.synthetic_test_per_class == 0)
        {
            return fail("synthetic datasets need at least one example per class".into());
        }
        if self.sweep_k.contains(&0) {
            return fail("sweep_k entries must be at least 1".into());
        }
        if let Some(labels) = &self.ecs_labels {
            if let Some(l) = labels.iter().find(|&&l| l >= crate::net::NUM_CLASSES) {
                return fail(format!("ecs label {l} out of range"));
            }
        }
        Ok(())
    }

    /// Every field, in a form [`TrainConfig::parse`] reads back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("architecture", self.architecture.name().into());
        kv("dataset", self.dataset.name().into());
        kv("data_dir", self.data_dir.display().to_string());
        kv("train_limit", limit_text(self.train_limit));
        kv("test_limit", limit_text(self.test_limit));
        kv("synthetic_train_per_class", self.synthetic_train_per_class.to_string());
        kv("synthetic_test_per_class", self.synthetic_test_per_class.to_string());
        kv("synthetic_spread", format!("{:?}", self.synthetic_spread));
        kv("batch_size", self.batch_size.to_string());
        kv("optimizer", "adam".into());
        kv("criterion", "cross-entropy".into());
        kv("learning_rate", format!("{:?}", self.learning_rate));
        kv("clusterability_factor", format!("{:?}", self.lambda));
        kv("num_clusters", self.k.to_string());
        kv("warmup_epochs", self.warmup_epochs.to_string());
        kv("main_epochs", self.main_epochs.to_string());
        kv("seed", self.seed.to_string());
        kv("clustered_layer", self.clustered_layer.to_string());
        kv("similarity", self.similarity.name().into());
        kv("evaluate", self.evaluate.to_string());
        kv("guard_delta", format!("{:?}", self.guard_delta));
        kv("prune_fraction", format!("{:?}", self.prune_fraction));
        kv("ecs_labels", self.ecs_labels.as_deref().map_or_else(|| "all".to_string(), join));
        kv("plain_epochs", self.plain_epochs.to_string());
        kv("sweep_k", join(&self.sweep_k));
        s
    }

    pub fn total_epochs(&self) -> usize {
        self.warmup_epochs + self.main_epochs
    }
}
