//! Sweeps one configuration key over a list of values, one full training run per value.

use std::str::FromStr;

use super::config::TrainConfig;
use super::data::TrainingData;
use super::train::{train, RunReport};
use crate::error::{Error, Result};

/// A key and the values it takes, written `key=v1,v2,...`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<String>,
}

pub const SWEEPABLE_KEYS: &[&str] = &["group_size", "num_positives", "loss_kind", "aug_kind"];

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("sweep '{s}' is not key=v1,v2,...")))?;
        let key = key.trim();
        if !SWEEPABLE_KEYS.contains(&key) {
            return Err(Error::Config(format!(
                "cannot sweep '{key}' (one of {})",
                SWEEPABLE_KEYS.join(", ")
            )));
        }
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(Error::Config(format!("sweep over '{key}' lists no values")));
        }
        Ok(Self {
            key: key.to_string(),
            values,
        })
    }
}

impl Sweep {
    /// One validated configuration per value, all sharing the base seeds.
    pub fn configs(&self, base: &TrainConfig) -> Result<Vec<TrainConfig>> {
        self.values
            .iter()
            .map(|v| {
                let mut c = base.clone();
                c.set(&self.key, v)?;
                c.validate()?;
                Ok(c)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub value: String,
    pub report: RunReport,
}

/// Trains once per swept value and hands each finished row's line to `sink`
/// immediately. A failed run emits a `status=failed` line before its error is returned.
pub fn ablate(
    base: &TrainConfig,
    data: &TrainingData,
    sweep: &Sweep,
    mut sink: impl FnMut(&str) -> Result<()>,
) -> Result<Vec<AblationRow>> {
    let configs = sweep.configs(base)?;
    let mut rows = Vec::with_capacity(configs.len());
    for (value, config) in sweep.values.iter().zip(&configs) {
        match train(config, data) {
            Ok(outcome) => {
                sink(&format!(
                    "sweep={},value={value},status=ok,{}",
                    sweep.key,
                    outcome.report.summary_line()
                ))?;
                rows.push(AblationRow {
                    value: value.clone(),
                    report: outcome.report,
                });
            }
            Err(e) => {
                let message = e.to_string().replace([',', '\n'], ";");
                sink(&format!("sweep={},value={value},status=failed,error={message}", sweep.key))?;
                return Err(e);
            }
        }
    }
    Ok(rows)
}
