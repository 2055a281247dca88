use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rff::{ModelConfig, TrainConfig};
use crate::signal::{DatasetConfig, SplitName};

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Cap on scored pairs per split.
    pub max_pairs: usize,
    /// Splits scored by `eval` when none are named on the command line.
    pub splits: Vec<SplitName>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_pairs: crate::eval::DEFAULT_PAIR_CAP,
            splits: SplitName::TESTS.to_vec(),
        }
    }
}

/// Sweep grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
    pub l_ns: Vec<usize>,
    pub l_rff: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snr_db: vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            l_ns: vec![2, 4],
            l_rff: vec![8, 16],
        }
    }
}

/// Every setting of an experiment. Serialized as TOML; any field can be
/// overridden with a dotted `section.key=value` assignment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Root of every random stream.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Apply `key=value` where `key` is a dotted path such as
    /// `dataset.known_devices` and `value` is a TOML value (bare words are
    /// taken as strings).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value =
            toml::Value::from_str(raw).unwrap_or_else(|_| toml::Value::String(raw.to_string()));
        let mut doc = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = slot
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("{key}: {part:?} is not inside a table")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            slot = table.get_mut(*part).ok_or_else(|| {
                Error::Config(format!("unknown config section {part:?} in {key}"))
            })?;
        }
        let updated: ExperimentConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        // Reject typos: an unknown key leaves the config unchanged.
        let known = toml::Value::try_from(&updated).map_err(|e| Error::Config(e.to_string()))?;
        let mut probe = &known;
        for part in &parts {
            probe = probe
                .get(part)
                .ok_or_else(|| Error::Config(format!("unknown config key {key}")))?;
        }
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if (self.model.symbol_count, self.model.samples_per_chip)
            != (self.dataset.symbol_count, self.dataset.samples_per_chip)
        {
            return Err(Error::Config(
                "model preamble (symbol_count, samples_per_chip) must match the dataset".into(),
            ));
        }
        if self.eval.max_pairs == 0 {
            return Err(Error::Config("eval.max_pairs must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::default();
        c.train.augment_snr_db = Some([5.0, 30.0]);
        c.dataset.test_snr = Some(crate::signal::SnrPolicy::Uniform {
            min_db: 5.0,
            max_db: 10.0,
        });
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
        assert_eq!(
            ExperimentConfig::from_toml("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        c.set("dataset.known_devices=3").unwrap();
        c.set("model.pipeline=ts_offsets").unwrap();
        c.set("train.adam.lr = 0.001").unwrap();
        c.set("seed=9").unwrap();
        assert_eq!(c.dataset.known_devices, 3);
        assert_eq!(c.model.pipeline, crate::rff::Pipeline::TsOffsets);
        assert_eq!(c.train.adam.lr, 1e-3);
        assert_eq!(c.seed, 9);
        assert!(c.set("dataset.no_such_key=1").is_err());
        assert!(c.set("model.pipeline=bogus").is_err());
        assert!(c.set("nonsense").is_err());
    }
}
