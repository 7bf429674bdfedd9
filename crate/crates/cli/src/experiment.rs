//! Held-out comparison of two training losses on a synthetic dataset.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use cloudseg::losscore::{LossConfig, LossKind};
use cloudseg::metrics::{confusion, pool, ClassMetrics, Confusion};
use cloudseg::microfcn::{predict_scene, train, ModelConfig, PredictConfig, Sample, TrainConfig};
use cloudseg::sdaa::Scene;
use cloudseg::{seed, Result};

use crate::data::{synth_dataset, SynthConfig};

/// Knobs of [`run_loss_effect`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossEffectConfig {
    pub synth: SynthConfig,
    /// Fraction of scenes held out for scoring.
    pub test_fraction: f64,
    pub seeds: Vec<u64>,
    pub data_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for LossEffectConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            test_fraction: 0.2,
            seeds: (0..5).collect(),
            data_seed: 2024,
            model: ModelConfig { contracting_blocks: 3, base_width: 6, ..ModelConfig::default() },
            train: TrainConfig { lr0: 1e-3, epochs: 30, ..TrainConfig::default() },
        }
    }
}

/// Held-out pooled Jaccard of both losses for every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossEffectReport {
    pub seeds: Vec<u64>,
    pub candidate: Vec<f64>,
    pub baseline: Vec<f64>,
    pub median_candidate: f64,
    pub median_baseline: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Train on the scenes not held out for `run_seed` and return the pooled
/// Jaccard of the held-out ones.
pub fn heldout_jaccard(scenes: &[Scene], kind: LossKind, run_seed: u64, cfg: &LossEffectConfig) -> Result<f64> {
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(run_seed, "holdout")));
    let n_test = ((scenes.len() as f64 * cfg.test_fraction).round() as usize).clamp(1, scenes.len() - 1);
    let (test, fit) = order.split_at(n_test);
    let samples: Vec<Sample> =
        fit.iter().map(|&i| Sample::binary(scenes[i].scene_id.clone(), &scenes[i].raster, &scenes[i].cloud_mask)).collect::<Result<_>>()?;
    let tcfg = TrainConfig { seed: run_seed, ..cfg.train.clone() };
    let outcome = train(&samples, kind, &LossConfig::default(), &tcfg, &cfg.model)?;
    let pcfg = PredictConfig { patch_size: cfg.synth.size, ..PredictConfig::default() };
    let confusions: Vec<Confusion> = test
        .iter()
        .map(|&i| {
            let pred = predict_scene(&outcome.model, &scenes[i].raster, &pcfg)?;
            confusion(&scenes[i].cloud_mask, &pred.masks[0])
        })
        .collect::<Result<_>>()?;
    Ok(ClassMetrics::from_counts(&pool(&confusions)).jaccard)
}

/// Compare `candidate` against `baseline` over every configured seed.
pub fn run_loss_effect(cfg: &LossEffectConfig, candidate: LossKind, baseline: LossKind) -> Result<LossEffectReport> {
    let scenes = synth_dataset(&cfg.synth, cfg.data_seed)?;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &s in &cfg.seeds {
        a.push(heldout_jaccard(&scenes, candidate, s, cfg)?);
        b.push(heldout_jaccard(&scenes, baseline, s, cfg)?);
        log::info!("seed {s}: {candidate} {:.4}, {baseline} {:.4}", a[a.len() - 1], b[b.len() - 1]);
    }
    Ok(LossEffectReport { seeds: cfg.seeds.clone(), median_candidate: median(&a), median_baseline: median(&b), candidate: a, baseline: b })
}
