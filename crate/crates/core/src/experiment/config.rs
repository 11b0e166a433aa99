use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::SweepKind;
use crate::specnet::{ModelKind, SdConfig, TrainConfig};
use crate::synthgen::{CutoutSpec, HeImageSpec, SyntheticImageSpec};

use super::search::SearchSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Cutout,
    Robustness,
    StainNormComparison,
    Gridsearch,
    Bench,
}

/// Which synthetic benchmark `train` and `gridsearch` use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Cutout,
    He,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DatasetKind,
    pub n_train: usize,
    pub n_test: usize,
    pub image: SyntheticImageSpec,
    pub cutout: CutoutSpec,
    pub he: HeImageSpec,
    /// Stain comparison test shift: rotation of the stain vectors (positive
    /// spreads them apart) and concentration multipliers.
    pub stain_shift_deg: f64,
    pub stain_shift_intensity: [f64; 2],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Cutout,
            n_train: 4000,
            n_test: 1000,
            image: SyntheticImageSpec::default(),
            cutout: CutoutSpec::desk(),
            he: HeImageSpec::default(),
            stain_shift_deg: -10.0,
            stain_shift_intensity: [1.4, 0.7],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width; 0 gives a linear model.
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 64 }
    }
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        if self.hidden == 0 {
            ModelKind::Linear
        } else {
            ModelKind::Mlp { hidden: self.hidden }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub kinds: Vec<SweepKind>,
    /// Blur width treated as the severest level in the summary comparison.
    pub compare_blur: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            kinds: SweepKind::ALL.to_vec(),
            compare_blur: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub images: usize,
    pub warmup: usize,
    pub size: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            images: 32,
            warmup: 2,
            size: 64,
        }
    }
}

/// A full experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Penalty for the spectral-decoupling arm.
    pub sd: SdConfig,
    pub search: SearchSpace,
    pub robustness: RobustnessConfig,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Cutout,
            seeds: vec![0, 1, 2, 3, 4],
            out: PathBuf::from("results"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sd: SdConfig::TUNED_EQ2_CUTOUT,
            search: SearchSpace::default(),
            robustness: RobustnessConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults for one experiment kind.
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let mut cfg = Self {
            kind,
            ..Self::default()
        };
        if matches!(kind, ExperimentKind::Robustness | ExperimentKind::StainNormComparison) {
            cfg.data.kind = DatasetKind::He;
            cfg.sd = SdConfig::TUNED_EQ1;
        }
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(Error::file(path))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Replaces the seed list with `base, base + 1, …` of the same length.
    pub fn rebase_seeds(&mut self, base: u64) {
        let n = self.seeds.len().max(1) as u64;
        self.seeds = (base..base + n).collect();
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        self.data.image.validate()?;
        self.data.cutout.validate_for(self.data.image.width, self.data.image.height)?;
        self.data.he.validate()?;
        if !self.data.stain_shift_deg.is_finite() {
            return Err(Error::Config("stain_shift_deg must be finite".into()));
        }
        HeImageSpec {
            intensity: self.data.stain_shift_intensity,
            ..self.data.he
        }
        .validate()?;
        for (name, n) in [("n_train", self.data.n_train), ("n_test", self.data.n_test)] {
            if n < 2 || n % 2 != 0 {
                return Err(Error::Config(format!("{name} must be even and >= 2, got {n}")));
            }
        }
        self.sd.validate()?;
        self.train.validate(&SdConfig::Off)?;
        self.search.validate()?;
        if !(crate::perturb::MIN_BLUR..=crate::perturb::MAX_BLUR).contains(&self.robustness.compare_blur) {
            return Err(Error::Config(format!(
                "compare_blur must be in {}..={}",
                crate::perturb::MIN_BLUR,
                crate::perturb::MAX_BLUR
            )));
        }
        if self.bench.images == 0 || self.bench.size < 2 {
            return Err(Error::Config("bench needs at least one image of size >= 2".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = ExperimentConfig::for_kind(ExperimentKind::Robustness);
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let small = ExperimentConfig::from_toml("kind = \"gridsearch\"\nseeds = [7]\n[data]\nn_train = 200\n").unwrap();
        assert_eq!(small.kind, ExperimentKind::Gridsearch);
        assert_eq!(small.data.n_test, 1000);
        assert_eq!(small.model.hidden, 64);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml("seeds = []").is_err());
        assert!(ExperimentConfig::from_toml("seeds = [1, 1]").is_err());
        assert!(ExperimentConfig::from_toml("colour = 3").is_err());
        assert!(ExperimentConfig::from_toml("[data]\nn_train = 3").is_err());
        assert!(ExperimentConfig::from_toml("[sd]\nvariant = \"eq1\"\nlambda = -1.0").is_err());
    }

    #[test]
    fn rebase_keeps_length() {
        let mut cfg = ExperimentConfig::default();
        cfg.rebase_seeds(10);
        assert_eq!(cfg.seeds, vec![10, 11, 12, 13, 14]);
    }
}
