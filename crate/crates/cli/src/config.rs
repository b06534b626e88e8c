//! The `--config` file: one optional table per command family.

use std::fs;
use std::path::{Path, PathBuf};

use mug::augment::AugmentConfig;
use mug::data::{DataError, SynthConfig};
use mug::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksConfig {
    /// Random shapes tried by `scan-check`.
    pub cases: usize,
    /// Relative-error bound for `grad-check`.
    pub tolerance: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            cases: 100,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Overrides the per-table seeds; `--seed` overrides this.
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub checks: ChecksConfig,
    #[serde(skip)]
    pub source: Option<PathBuf>,
}

impl CliConfig {
    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| DataError::Format {
            path: path.to_path_buf(),
            field: "config",
            message: e.to_string(),
        })?;
        cfg.train.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.source = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, DataError> {
        path.map_or_else(|| Ok(Self::default()), Self::read)
    }

    /// Pushes one seed into every table.
    pub fn apply_seed(&mut self, flag: Option<u64>) {
        if let Some(seed) = flag.or(self.seed) {
            self.seed = Some(seed);
            self.synth.seed = seed;
            self.augment.seed = seed;
            self.train.seed = seed;
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
