//! Synthetic dataset generation and scene-to-sample conversion.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use cloudseg::microfcn::{Head, ModelConfig, Sample};
use cloudseg::raster::io::{list_scene_dirs, read_scene};
use cloudseg::raster::{synth_scene_with, Mask, SynthOptions};
use cloudseg::sdaa::{Scene, SolarGeometry};
use cloudseg::{seed, Error, Result};

/// What the network segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    #[default]
    Cloud,
    Shadow,
    /// Three classes: cloud, shadow, clear.
    CloudShadow,
}

impl Task {
    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Self::Cloud => &["cloud"],
            Self::Shadow => &["shadow"],
            Self::CloudShadow => &["cloud", "shadow", "clear"],
        }
    }

    /// Output classes and head the model needs for this task.
    pub fn head(self) -> (usize, Head) {
        match self {
            Self::Cloud | Self::Shadow => (1, Head::Sigmoid),
            Self::CloudShadow => (3, Head::Softmax),
        }
    }

    pub fn check_model(self, model: &ModelConfig) -> Result<()> {
        let (classes, head) = self.head();
        if (model.classes, model.head) != (classes, head) {
            return Err(Error::InvalidConfig(format!(
                "task {self} needs model.classes = {classes} and model.head = \"{head}\", got {} and \"{}\"",
                model.classes, model.head
            )));
        }
        Ok(())
    }

    /// Ground-truth masks in class order.
    pub fn masks(self, scene: &Scene) -> Vec<Mask> {
        match self {
            Self::Cloud => vec![scene.cloud_mask.clone()],
            Self::Shadow => vec![scene.shadow_mask.clone()],
            Self::CloudShadow => {
                let clear = scene.cloud_mask.or(&scene.shadow_mask).not();
                vec![scene.cloud_mask.clone(), scene.shadow_mask.clone(), clear]
            }
        }
    }

    pub fn sample(self, scene: &Scene) -> Result<Sample> {
        let masks = self.masks(scene);
        match self {
            Self::Cloud | Self::Shadow => Sample::binary(scene.scene_id.clone(), &scene.raster, &masks[0]),
            Self::CloudShadow => Sample::from_masks(scene.scene_id.clone(), &scene.raster, &masks),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cloud => "cloud",
            Self::Shadow => "shadow",
            Self::CloudShadow => "cloud-shadow",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cloud" => Ok(Self::Cloud),
            "shadow" => Ok(Self::Shadow),
            "cloud-shadow" => Ok(Self::CloudShadow),
            other => Err(Error::InvalidConfig(format!("unknown task '{other}' (expected cloud|shadow|cloud-shadow)"))),
        }
    }
}

/// Layout of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scenes: usize,
    /// Side of the square scenes, pixels.
    pub size: usize,
    /// Fraction of scenes without any cloud.
    pub empty_fraction: f64,
    /// Bright non-cloud cover painted into the cloud-free scenes.
    pub confuser_cover: f64,
    /// Cloud cover of the cloudy scenes is drawn uniformly from this range.
    pub cloud_cover: [f64; 2],
    /// Solar zenith is drawn uniformly from this range, degrees.
    pub zenith: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { scenes: 60, size: 64, empty_fraction: 0.3, confuser_cover: 0.2, cloud_cover: [0.1, 0.5], zenith: [20.0, 60.0] }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.scenes == 0 || self.size < 2 {
            return bad("synth needs at least one scene of at least 2x2 pixels".into());
        }
        if !(0.0..=1.0).contains(&self.empty_fraction) || !(0.0..=1.0).contains(&self.confuser_cover) {
            return bad("empty_fraction and confuser_cover must lie in [0, 1]".into());
        }
        let [lo, hi] = self.cloud_cover;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad(format!("cloud_cover range [{lo}, {hi}] must be ordered within [0, 1]"));
        }
        let [zlo, zhi] = self.zenith;
        if !(0.0 <= zlo && zlo <= zhi && zhi < 90.0) {
            return bad(format!("zenith range [{zlo}, {zhi}] must be ordered within [0, 90)"));
        }
        Ok(())
    }
}

/// Deterministic scenes; the first `round(empty_fraction·scenes)` are
/// cloud-free and carry the confusers.
pub fn synth_dataset(cfg: &SynthConfig, root_seed: u64) -> Result<Vec<Scene>> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive(root_seed, "synth"));
    let empty = (cfg.scenes as f64 * cfg.empty_fraction).round() as usize;
    (0..cfg.scenes)
        .map(|i| {
            let geometry = SolarGeometry::new(rng.random_range(0.0..360.0), rng.random_range(cfg.zenith[0]..=cfg.zenith[1]))?;
            let mut opts = SynthOptions::new(cfg.size, cfg.size, 0.0, geometry);
            if i < empty {
                opts.confuser_cover = cfg.confuser_cover;
            } else {
                opts.cloud_cover = rng.random_range(cfg.cloud_cover[0]..=cfg.cloud_cover[1]);
            }
            synth_scene_with(seed::derive_indexed(root_seed, "scene", i as u64), &opts)
        })
        .collect()
}

/// Every scene directory below `root`, with its directory name.
pub fn load_scenes(root: &Path) -> Result<Vec<(String, Scene)>> {
    let dirs = list_scene_dirs(root)?;
    if dirs.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no scene directories found", root.display())));
    }
    dirs.iter()
        .map(|d| {
            let name = d.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            Ok((name, read_scene(d)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_deterministic_with_requested_empty_share() {
        let cfg = SynthConfig { scenes: 10, size: 32, ..SynthConfig::default() };
        let a = synth_dataset(&cfg, 4).unwrap();
        assert_eq!(a, synth_dataset(&cfg, 4).unwrap());
        assert_eq!(a.iter().filter(|s| s.cloud_mask.is_all_false()).count(), 3);
        assert_ne!(a, synth_dataset(&cfg, 5).unwrap());
    }

    #[test]
    fn task_masks_partition_for_three_classes() {
        let s = &synth_dataset(&SynthConfig { scenes: 5, size: 32, ..SynthConfig::default() }, 1).unwrap()[4];
        let m = Task::CloudShadow.masks(s);
        for k in 0..32 * 32 {
            assert_eq!(m.iter().filter(|x| x.data()[k]).count(), 1);
        }
        assert!(Task::CloudShadow.sample(s).is_ok());
    }

    #[test]
    fn model_head_must_match_task() {
        assert!(Task::Cloud.check_model(&ModelConfig::default()).is_ok());
        assert!(Task::CloudShadow.check_model(&ModelConfig::default()).is_err());
        assert_eq!("cloud-shadow".parse::<Task>().unwrap(), Task::CloudShadow);
    }
}
