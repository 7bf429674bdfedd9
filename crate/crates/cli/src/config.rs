//! Run configuration: built-in defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cloudseg::losscore::{CeVariant, LossConfig, LossKind};
use cloudseg::microfcn::{ModelConfig, PredictConfig, TrainConfig};
use cloudseg::raster::PatchMode;
use cloudseg::sdaa::{default_param_grid, SdaaParams};
use cloudseg::{Error, Result};

use crate::data::{SynthConfig, Task};

/// Augmentation settings of `augment` and `gridsearch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdaaSection {
    /// Parameter triples to use; the full default grid when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<SdaaParams>>,
    /// Share of scenes the grid search scores on.
    pub holdout_fraction: f64,
}

impl Default for SdaaSection {
    fn default() -> Self {
        Self { params: None, holdout_fraction: 0.2 }
    }
}

impl SdaaSection {
    pub fn grid(&self) -> Vec<SdaaParams> {
        self.params.clone().unwrap_or_else(default_param_grid)
    }
}

/// Default locations; every one can also be given on the command line.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenes: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossvalSection {
    pub folds: usize,
}

impl Default for CrossvalSection {
    fn default() -> Self {
        Self { folds: 5 }
    }
}

/// Everything a command may need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream.
    pub seed: u64,
    pub loss: LossKind,
    pub task: Task,
    pub out: PathBuf,
    pub loss_config: LossConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub predict: PredictConfig,
    pub synth: SynthConfig,
    pub sdaa: SdaaSection,
    pub data: DataPaths,
    pub crossval: CrossvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            loss: LossKind::Fjl1,
            task: Task::Cloud,
            out: PathBuf::from("out"),
            loss_config: LossConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            predict: PredictConfig::default(),
            synth: SynthConfig::default(),
            sdaa: SdaaSection::default(),
            data: DataPaths::default(),
            crossval: CrossvalSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub loss: Option<LossKind>,
    pub ce_variant: Option<CeVariant>,
    pub patch_size: Option<usize>,
    pub overlap: Option<PatchMode>,
    pub threshold: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("configuration: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Codec(format!("configuration: {e}")))
    }

    /// Defaults, overlaid by the file at `path` if any, overlaid by `flags`.
    pub fn resolve(path: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p)?)?,
            None => Self::default(),
        };
        cfg.apply(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, flags: &Overrides) {
        if let Some(v) = flags.seed {
            self.seed = v;
        }
        if let Some(v) = flags.loss {
            self.loss = v;
        }
        if let Some(v) = flags.ce_variant {
            self.loss_config.ce_variant = v;
        }
        if let Some(v) = flags.patch_size {
            self.predict.patch_size = v;
        }
        if let Some(v) = flags.overlap {
            self.predict.overlap = v;
        }
        if let Some(v) = flags.threshold {
            self.predict.threshold = v;
        }
        if let Some(v) = &flags.out {
            self.out = v.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_config.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.predict.validate()?;
        self.synth.validate()?;
        self.task.check_model(&self.model)?;
        if let Some(params) = &self.sdaa.params {
            params.iter().try_for_each(SdaaParams::validate)?;
        }
        if !(self.sdaa.holdout_fraction > 0.0 && self.sdaa.holdout_fraction < 1.0) {
            return Err(Error::InvalidConfig("sdaa.holdout_fraction must lie in (0, 1)".into()));
        }
        if self.crossval.folds < 2 {
            return Err(Error::InvalidConfig("crossval.folds must be at least 2".into()));
        }
        Ok(())
    }

    /// Training settings seeded from the root seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: cloudseg::seed::derive(self.seed, "train"), ..self.train.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.sdaa.params = Some(vec![SdaaParams::new(90.0, 20.0, 0.9).unwrap()]);
        cfg.predict.input_size = Some(128);
        cfg.data.scenes = Some("scenes".into());
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml(&RunConfig::default().to_toml().unwrap()).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sede = 3").is_err());
        assert!(RunConfig::from_toml("[train]\nlr = 0.1").is_err());
        assert!(RunConfig::from_toml("[train]\nseed = 1").is_err());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 5\nloss = \"ce\"\n[predict]\npatch_size = 32\nthreshold = 0.4\n").unwrap();
        let flags = Overrides { loss: Some(LossKind::Jaccard), threshold: Some(0.7), ..Overrides::default() };
        let cfg = RunConfig::resolve(Some(&path), &flags).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.loss, LossKind::Jaccard);
        assert_eq!(cfg.predict.patch_size, 32);
        assert_eq!(cfg.predict.threshold, 0.7);
        assert_eq!(cfg.train.lr0, 1e-4);
    }

    #[test]
    fn defaults_carry_training_protocol() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.train.lr0, 1e-4);
        assert_eq!(cfg.train.plateau_patience, 15);
        assert_eq!(cfg.train.lr_decay_factor, 0.3);
        assert_eq!(cfg.train.lr_floor, 1e-8);
        assert_eq!(cfg.train.val_fraction, 0.2);
        assert_eq!(cfg.predict.threshold, 0.5);
        assert_eq!(cfg.sdaa.grid().len(), 120);
        assert!((cfg.loss_config.max_ce - 16.1181).abs() < 1e-3);
    }

    #[test]
    fn inconsistent_task_rejected() {
        let mut cfg = RunConfig { task: Task::CloudShadow, ..RunConfig::default() };
        assert!(cfg.validate().is_err());
        cfg.model.classes = 3;
        cfg.model.head = cloudseg::microfcn::Head::Softmax;
        assert!(cfg.validate().is_ok());
    }
}
