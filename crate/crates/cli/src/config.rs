//! Layered run configuration: defaults, then the `--config` file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use adafnio_core::data::SyntheticSpec;
use adafnio_core::model::ModelConfig;
use adafnio_core::train::TrainConfig;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// Name of the resolved-config echo written into every output directory.
pub const RESOLVED: &str = "config.resolved.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of `<id>/im{1,2,3}.png` triplets. Synthetic triplets are
    /// generated in memory from `synthetic` when unset.
    pub dataset: Option<PathBuf>,
    /// Share of triplets, taken from the end of the sorted list, held out
    /// for validation.
    pub val_fraction: f64,
    pub synthetic: SyntheticSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { dataset: None, val_fraction: 0.1, synthetic: SyntheticSpec { channels: 3, ..SyntheticSpec::default() } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Drop settings scored by `eval`; each must be a power of two.
    pub drop: Vec<usize>,
    /// Grid sides scored by `eval` on synthetic textures.
    pub resolutions: Vec<usize>,
    /// Frames per synthetic sequence; raised to `2k + 1` when a drop needs it.
    pub sequence_length: usize,
    /// Multiples of the base resolution scored by `restest`.
    pub scales: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { drop: vec![1], resolutions: Vec::new(), sequence_length: 9, scales: vec![1.0, 2.0, 4.0] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds model initialization and the data order.
    pub seed: u64,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub data: DataConfig,
    pub evaluation: EvalConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        self.data.synthetic.validate()?;
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            bail!("data.val_fraction {} is outside [0, 1)", self.data.val_fraction);
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Writes the resolved config into `dir`, creating it if needed.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RESOLVED);
        fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "sede = 1",
            "[training]\nepoch = 2",
            "[model.nio]\nbase_res = 32",
            "[[model.nio.level_modes]]\nmodes1 = 1\nmodes2 = 1\nmodes3 = 1",
        ] {
            assert!(toml::from_str::<RunConfig>(text).is_err(), "{text}");
        }
    }

    #[test]
    fn partial_files_keep_defaults() {
        let c: RunConfig = toml::from_str("seed = 4\n[training]\nepochs = 1").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.training.epochs, 1);
        assert_eq!(c.training.batch_size, 32);
        assert_eq!(c.training.optimizer.lr, 1e-4);
        assert_eq!(c.model.blend.w1, 0.01);
    }
}
