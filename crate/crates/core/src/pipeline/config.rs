//! Training configuration and its flat `key = value` file format.
//!
//! Blank lines and `#` comments are ignored. Every key is optional in a file;
//! missing keys keep their defaults. Serialization writes every key, and
//! reals are written in shortest round-trip form so parse ∘ serialize is the
//! identity.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::encoder::Augmentation;
use crate::error::{Error, Result};
use crate::losses::LossKind;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub temperature: f64,
    /// Weight of each positive term; `None` means `1 / (num_positives − 1)`.
    pub lambda_m: Option<f64>,
    /// Views per sample, anchor included.
    pub num_positives: usize,
    pub group_size: usize,
    pub shuffled: bool,
    pub momentum: f64,
    pub ridge: f64,
    pub learning_rate: f64,
    pub sgd_momentum: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub eval_every: usize,
    pub loss_kind: LossKind,
    pub aug_kind: Augmentation,
    /// Whiten embeddings at evaluation with momentum statistics (SGW runs only).
    pub eval_whitening: bool,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub num_clusters: usize,
    pub per_cluster: usize,
    pub dev_per_cluster: usize,
    pub noise_scale: f64,
    pub eval_pairs: usize,
    pub seed: u64,
    pub data_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            temperature: 0.05,
            lambda_m: None,
            num_positives: 3,
            group_size: 8,
            shuffled: true,
            momentum: 0.95,
            ridge: 1e-5,
            learning_rate: 1e-2,
            sgd_momentum: 0.0,
            batch_size: 64,
            steps: 2000,
            eval_every: 125,
            loss_kind: LossKind::SumOut,
            aug_kind: Augmentation::Sgw,
            eval_whitening: true,
            input_dim: 32,
            hidden_dim: 64,
            embed_dim: 16,
            dropout: 0.1,
            num_clusters: 8,
            per_cluster: 64,
            dev_per_cluster: 32,
            noise_scale: 0.3,
            eval_pairs: 512,
            seed: 0,
            data_seed: 0,
        }
    }
}

pub fn loss_kind_name(kind: LossKind) -> &'static str {
    match kind {
        LossKind::SumOut => "sum_out",
        LossKind::SumIn => "sum_in",
    }
}

pub fn aug_kind_name(kind: Augmentation) -> &'static str {
    match kind {
        Augmentation::DropoutOnly => "dropout_only",
        Augmentation::Sgw => "sgw",
    }
}

pub fn parse_loss_kind(s: &str) -> Result<LossKind> {
    match s {
        "sum_out" => Ok(LossKind::SumOut),
        "sum_in" => Ok(LossKind::SumIn),
        _ => Err(Error::Config(format!("unknown loss_kind '{s}' (sum_out | sum_in)"))),
    }
}

pub fn parse_aug_kind(s: &str) -> Result<Augmentation> {
    match s {
        "dropout_only" => Ok(Augmentation::DropoutOnly),
        "sgw" => Ok(Augmentation::Sgw),
        _ => Err(Error::Config(format!("unknown aug_kind '{s}' (dropout_only | sgw)"))),
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = '{value}'")))
}

/// Every recognized key, in serialization order.
pub const CONFIG_KEYS: &[&str] = &[
    "temperature",
    "lambda_m",
    "num_positives",
    "group_size",
    "shuffled",
    "momentum",
    "ridge",
    "learning_rate",
    "sgd_momentum",
    "batch_size",
    "steps",
    "eval_every",
    "loss_kind",
    "aug_kind",
    "eval_whitening",
    "input_dim",
    "hidden_dim",
    "embed_dim",
    "dropout",
    "num_clusters",
    "per_cluster",
    "dev_per_cluster",
    "noise_scale",
    "eval_pairs",
    "seed",
    "data_seed",
];

impl TrainConfig {
    pub fn lambda(&self) -> f64 {
        self.lambda_m
            .unwrap_or_else(|| 1.0 / (self.num_positives.saturating_sub(1).max(1)) as f64)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "temperature" => self.temperature = parse_value(key, value)?,
            "lambda_m" => {
                self.lambda_m = if value == "auto" {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "num_positives" => self.num_positives = parse_value(key, value)?,
            "group_size" => self.group_size = parse_value(key, value)?,
            "shuffled" => self.shuffled = parse_value(key, value)?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "ridge" => self.ridge = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "sgd_momentum" => self.sgd_momentum = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "steps" => self.steps = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "loss_kind" => self.loss_kind = parse_loss_kind(value)?,
            "aug_kind" => self.aug_kind = parse_aug_kind(value)?,
            "eval_whitening" => self.eval_whitening = parse_value(key, value)?,
            "input_dim" => self.input_dim = parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, value)?,
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "num_clusters" => self.num_clusters = parse_value(key, value)?,
            "per_cluster" => self.per_cluster = parse_value(key, value)?,
            "dev_per_cluster" => self.dev_per_cluster = parse_value(key, value)?,
            "noise_scale" => self.noise_scale = parse_value(key, value)?,
            "eval_pairs" => self.eval_pairs = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "data_seed" => self.data_seed = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "temperature" => self.temperature.to_string(),
            "lambda_m" => self.lambda_m.map_or_else(|| "auto".to_string(), |v| v.to_string()),
            "num_positives" => self.num_positives.to_string(),
            "group_size" => self.group_size.to_string(),
            "shuffled" => self.shuffled.to_string(),
            "momentum" => self.momentum.to_string(),
            "ridge" => self.ridge.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "sgd_momentum" => self.sgd_momentum.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "steps" => self.steps.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "loss_kind" => loss_kind_name(self.loss_kind).to_string(),
            "aug_kind" => aug_kind_name(self.aug_kind).to_string(),
            "eval_whitening" => self.eval_whitening.to_string(),
            "input_dim" => self.input_dim.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "dropout" => self.dropout.to_string(),
            "num_clusters" => self.num_clusters.to_string(),
            "per_cluster" => self.per_cluster.to_string(),
            "dev_per_cluster" => self.dev_per_cluster.to_string(),
            "noise_scale" => self.noise_scale.to_string(),
            "eval_pairs" => self.eval_pairs.to_string(),
            "seed" => self.seed.to_string(),
            "data_seed" => self.data_seed.to_string(),
            _ => return None,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
            config
                .set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(config)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.serialize())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if let Some(l) = self.lambda_m {
            if !(l > 0.0) || !l.is_finite() {
                return fail(format!("lambda_m must be positive, got {l}"));
            }
        }
        if self.num_positives < 2 {
            return fail(format!("num_positives must be at least 2, got {}", self.num_positives));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return fail(format!("sgd_momentum must lie in [0, 1), got {}", self.sgd_momentum));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return fail(format!("ridge must be non-negative, got {}", self.ridge));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive".into());
        }
        if self.input_dim == 0 || self.hidden_dim == 0 || self.embed_dim == 0 {
            return fail("encoder dimensions must be positive".into());
        }
        if self.group_size == 0 || !self.embed_dim.is_multiple_of(self.group_size) {
            return fail(format!(
                "group_size {} must divide embed_dim {}",
                self.group_size, self.embed_dim
            ));
        }
        if self.num_clusters == 0 || self.per_cluster == 0 || self.dev_per_cluster < 2 {
            return fail("num_clusters and per_cluster must be positive, dev_per_cluster at least 2".into());
        }
        if self.num_clusters * self.per_cluster < self.batch_size {
            return fail(format!(
                "training pool of {} samples is smaller than batch_size {}",
                self.num_clusters * self.per_cluster,
                self.batch_size
            ));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return fail(format!("noise_scale must be non-negative, got {}", self.noise_scale));
        }
        if self.eval_pairs < 2 {
            return fail("eval_pairs must be at least 2".into());
        }
        Ok(())
    }
}
