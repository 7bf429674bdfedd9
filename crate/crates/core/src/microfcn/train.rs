use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{Head, Model, ModelConfig};
use super::optim::{Adam, PlateauSchedule};
use super::tensor::Tensor;
use crate::error::{config, invalid, shape, Result};
use crate::losscore::{
    class_weights, loss_and_gradient, weighted_class_loss, CeVariant, ClassStack, LossConfig, LossKind, Prediction, Target,
};
use crate::raster::{geometric_augment, normalize, Mask, Raster, RawRaster};
use crate::seed;

/// One training example: a normalised image and per-pixel class indices.
///
/// Binary tasks use label 1 for the foreground. Labels at or above the
/// class count belong to no class.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Raster<f64>,
    pub labels: Raster<u8>,
}

impl Sample {
    pub fn new(id: String, image: Raster<f64>, labels: Raster<u8>) -> Result<Self> {
        if !image.same_dims(&labels) || labels.channels() != 1 {
            return Err(shape("sample image and labels must share dimensions"));
        }
        Ok(Self { id, image, labels })
    }

    /// Binary sample from raw digital numbers and a foreground mask.
    pub fn binary(id: String, raw: &RawRaster, mask: &Mask) -> Result<Self> {
        Self::new(id, normalize(raw), mask.map(u8::from))
    }

    /// Multiclass sample; `masks[k]` marks class `k`.
    pub fn from_masks(id: String, raw: &RawRaster, masks: &[Mask]) -> Result<Self> {
        let (h, w) = raw.dims();
        let mut labels = Raster::filled(h, w, 1, u8::MAX);
        for (k, m) in masks.iter().enumerate() {
            if !m.same_dims(raw) {
                return Err(shape("class mask dimensions differ from the raster"));
            }
            for (l, &on) in labels.data_mut().iter_mut().zip(m.data()) {
                if on {
                    if *l != u8::MAX {
                        return Err(invalid("class masks overlap"));
                    }
                    *l = k as u8;
                }
            }
        }
        Self::new(id, normalize(raw), labels)
    }

    fn target(&self, class: usize, classes: usize) -> Target {
        let fg = if classes == 1 { 1 } else { class as u8 };
        Target::new(self.labels.data().iter().map(|&l| u8::from(l == fg)).collect()).expect("labels are 0/1")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub plateau_patience: usize,
    pub lr_decay_factor: f64,
    pub lr_floor: f64,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub epochs: usize,
    /// Random flip, quarter turn and zoom on every training sample.
    pub augment: bool,
    /// Set by the caller; not part of configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            plateau_patience: 15,
            lr_decay_factor: 0.3,
            lr_floor: 1e-8,
            batch_size: 4,
            val_fraction: 0.2,
            epochs: 30,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(config(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        if self.epochs == 0 {
            return Err(config("epochs must be positive"));
        }
        PlateauSchedule::new(self.lr0, self.plateau_patience, self.lr_decay_factor, self.lr_floor).map(|_| ())
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub warnings: Vec<String>,
}

/// History as comma-separated text with a header row.
pub fn history_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in history {
        w.serialize(r).map_err(|e| crate::Error::Codec(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Codec(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Loss and upstream gradient of one image, scaled by `scale`.
fn sample_loss(
    model: &Model,
    out: &Tensor,
    sample: &Sample,
    kind: LossKind,
    loss_cfg: &LossConfig,
    weights: Option<&[f64]>,
    scale: f64,
) -> Result<(f64, Tensor)> {
    let k = model.config().classes;
    let n = out.plane_len();
    let mut grad = Tensor::zeros(out.channels, out.height, out.width);
    let value = if k == 1 {
        let y = Prediction::new(out.data.clone())?;
        let (l, g) = loss_and_gradient(kind, &sample.target(1, 1), &y, loss_cfg)?;
        grad.data.iter_mut().zip(g).for_each(|(d, v)| *d = scale * v);
        l
    } else {
        let targets = (0..k).map(|c| sample.target(c, k)).collect();
        let preds = (0..k).map(|c| Prediction::new(out.plane(c).to_vec())).collect::<Result<Vec<_>>>()?;
        let stack = ClassStack::new(targets, preds)?;
        let uniform = vec![1.0; k];
        let (l, gs) = weighted_class_loss(&stack, weights.unwrap_or(&uniform), kind, loss_cfg)?;
        for (c, g) in gs.into_iter().enumerate() {
            grad.data[c * n..(c + 1) * n].iter_mut().zip(g).for_each(|(d, v)| *d = scale * v);
        }
        l
    };
    Ok((value, grad))
}

fn batch_weights(samples: &[&Sample], classes: usize) -> Option<Vec<f64>> {
    (classes > 1).then(|| {
        let mut counts = vec![0usize; classes];
        for s in samples {
            for &l in s.labels.data() {
                if (l as usize) < classes {
                    counts[l as usize] += 1;
                }
            }
        }
        class_weights(&counts)
    })
}

/// Mean loss of `model` over `samples`, without augmentation.
pub fn evaluate_loss(model: &Model, samples: &[Sample], kind: LossKind, loss_cfg: &LossConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("no samples to evaluate"));
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let weights = batch_weights(&refs, model.config().classes);
    let mut total = 0.0;
    for s in samples {
        let out = model.forward(&Tensor::from_raster(&s.image))?;
        total += sample_loss(model, &out, s, kind, loss_cfg, weights.as_deref(), 1.0)?.0;
    }
    Ok(total / samples.len() as f64)
}

fn empty_target_warning(samples: &[Sample], kind: LossKind, loss_cfg: &LossConfig, classes: usize) -> Option<String> {
    let all_empty = classes == 1 && samples.iter().all(|s| !s.labels.data().contains(&1));
    let as_written = loss_cfg.ce_variant == CeVariant::AsWritten;
    let gradient_free = match kind {
        LossKind::Jaccard => true,
        LossKind::CrossEntropy | LossKind::Fjl2 => as_written,
        LossKind::Fjl1 => false,
    };
    (all_empty && gradient_free)
        .then(|| format!("every training target is empty and the {kind} loss gives (almost) no gradient there; training proceeds"))
}

/// Train from scratch. See [`train_with`] for per-epoch reporting.
pub fn train(
    samples: &[Sample],
    kind: LossKind,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<TrainOutcome> {
    train_with(samples, kind, loss_cfg, cfg, model_cfg, |_| {})
}

/// Deterministic training: same samples, configs and seed give identical
/// parameters. The split, initialisation, batch order and augmentation each
/// draw from their own stream derived from `cfg.seed`.
pub fn train_with(
    samples: &[Sample],
    kind: LossKind,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    model_cfg.validate()?;
    if samples.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if model_cfg.head == Head::Softmax
        && samples.iter().any(|s| s.labels.data().iter().any(|&l| l != u8::MAX && l as usize >= model_cfg.classes))
    {
        return Err(invalid("sample labels exceed the class count"));
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(cfg.seed, "split")));
    let n_val = if cfg.val_fraction > 0.0 && samples.len() >= 2 {
        ((samples.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, samples.len() - 1)
    } else {
        0
    };
    let mut val_idx = order[..n_val].to_vec();
    let mut train_idx = order[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let val: Vec<Sample> = val_idx.iter().map(|&i| samples[i].clone()).collect();
    let train_set: Vec<Sample> = train_idx.iter().map(|&i| samples[i].clone()).collect();

    let warnings: Vec<String> = empty_target_warning(&train_set, kind, loss_cfg, model_cfg.classes).into_iter().collect();

    let mut model = Model::new(model_cfg.clone(), seed::derive(cfg.seed, "model"))?;
    let mut params = model.params();
    let mut adam = Adam::new(params.len());
    let mut schedule = PlateauSchedule::new(cfg.lr0, cfg.plateau_patience, cfg.lr_decay_factor, cfg.lr_floor)?;
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let lr = schedule.lr;
        let mut batch_order: Vec<usize> = (0..train_set.len()).collect();
        batch_order.shuffle(&mut seed::rng(seed::derive_indexed(cfg.seed, "shuffle", epoch as u64)));
        let mut aug_rng = seed::rng(seed::derive_indexed(cfg.seed, "augment", epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in batch_order.chunks(cfg.batch_size) {
            let prepared: Vec<Sample> = batch
                .iter()
                .map(|&i| {
                    let s = &train_set[i];
                    if cfg.augment {
                        let (image, labels) = geometric_augment(&s.image, &s.labels, &mut aug_rng)?;
                        Ok(Sample { id: s.id.clone(), image, labels })
                    } else {
                        Ok(s.clone())
                    }
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&Sample> = prepared.iter().collect();
            let weights = batch_weights(&refs, model_cfg.classes);
            let scale = 1.0 / prepared.len() as f64;
            let mut total_grad: Option<super::model::Gradients> = None;
            for s in &prepared {
                let cache = model.forward_cached(&Tensor::from_raster(&s.image))?;
                let (l, g) = sample_loss(&model, cache.output(), s, kind, loss_cfg, weights.as_deref(), scale)?;
                epoch_loss += l;
                let (grads, _) = model.backward(&cache, &g)?;
                match total_grad.as_mut() {
                    Some(t) => t.add_assign(&grads),
                    None => total_grad = Some(grads),
                }
            }
            let flat = total_grad.expect("batches are non-empty").flatten();
            adam.update(&mut params, &flat, lr)?;
            model.set_params(&params)?;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = if val.is_empty() { train_loss } else { evaluate_loss(&model, &val, kind, loss_cfg)? };
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
        }
        schedule.observe(val_loss);
        let record = EpochRecord { epoch, train_loss, val_loss, lr };
        on_epoch(&record);
        history.push(record);
    }
    model.set_params(&best.2)?;
    Ok(TrainOutcome { model, history, best_epoch: best.1, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::synth_scene;
    use crate::sdaa::SolarGeometry;

    fn dataset(n: usize, size: usize) -> Vec<Sample> {
        let g = SolarGeometry::new(135.0, 40.0).unwrap();
        (0..n)
            .map(|i| {
                let cover = if i % 3 == 0 { 0.0 } else { 0.25 };
                let s = synth_scene(i as u64, size, size, cover, g).unwrap();
                Sample::binary(s.scene_id.clone(), &s.raster, &s.cloud_mask).unwrap()
            })
            .collect()
    }

    fn small() -> (TrainConfig, ModelConfig) {
        let cfg = TrainConfig { epochs: 3, lr0: 1e-2, batch_size: 2, seed: 7, ..TrainConfig::default() };
        let model = ModelConfig { contracting_blocks: 2, base_width: 2, ..ModelConfig::default() };
        (cfg, model)
    }

    #[test]
    fn same_seed_identical_parameters() {
        let data = dataset(6, 16);
        let (cfg, mcfg) = small();
        let a = train(&data, LossKind::Fjl1, &LossConfig::default(), &cfg, &mcfg).unwrap();
        let b = train(&data, LossKind::Fjl1, &LossConfig::default(), &cfg, &mcfg).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.history, b.history);
        let c = train(&data, LossKind::Fjl1, &LossConfig::default(), &TrainConfig { seed: 8, ..cfg }, &mcfg).unwrap();
        assert_ne!(a.model.params(), c.model.params());
    }

    #[test]
    fn training_reduces_loss() {
        let data = dataset(8, 16);
        let (mut cfg, mcfg) = small();
        cfg.epochs = 12;
        cfg.augment = false;
        let out = train(&data, LossKind::Jaccard, &LossConfig::default(), &cfg, &mcfg).unwrap();
        let first = out.history[0].train_loss;
        let last = out.history.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        let mut best = f64::INFINITY;
        for r in &out.history {
            let next = best.min(r.val_loss);
            assert!(next <= best);
            best = next;
        }
    }

    #[test]
    fn warns_on_gradient_free_empty_targets() {
        let g = SolarGeometry::new(135.0, 40.0).unwrap();
        let data: Vec<Sample> = (0..3)
            .map(|i| {
                let s = synth_scene(i, 8, 8, 0.0, g).unwrap();
                Sample::binary(s.scene_id.clone(), &s.raster, &s.cloud_mask).unwrap()
            })
            .collect();
        let (mut cfg, mcfg) = small();
        cfg.epochs = 1;
        let out = train(&data, LossKind::Fjl2, &LossConfig::default(), &cfg, &mcfg).unwrap();
        assert_eq!(out.warnings.len(), 1);
        let out = train(&data, LossKind::Fjl1, &LossConfig::default(), &cfg, &mcfg).unwrap();
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn multiclass_training_runs() {
        let g = SolarGeometry::new(135.0, 40.0).unwrap();
        let data: Vec<Sample> = (0..4)
            .map(|i| {
                let s = synth_scene(i, 16, 16, 0.2, g).unwrap();
                let clear = s.cloud_mask.or(&s.shadow_mask).not();
                Sample::from_masks(s.scene_id.clone(), &s.raster, &[s.cloud_mask, s.shadow_mask, clear]).unwrap()
            })
            .collect();
        let (mut cfg, _) = small();
        cfg.epochs = 2;
        let mcfg = ModelConfig { contracting_blocks: 2, base_width: 2, classes: 3, head: Head::Softmax, ..ModelConfig::default() };
        let out = train(&data, LossKind::Fjl1, &LossConfig::default(), &cfg, &mcfg).unwrap();
        assert!(out.history.iter().all(|r| r.train_loss.is_finite() && r.val_loss.is_finite()));
    }

    #[test]
    fn rejects_empty_dataset() {
        let (cfg, mcfg) = small();
        assert!(train(&[], LossKind::Jaccard, &LossConfig::default(), &cfg, &mcfg).is_err());
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let h = [EpochRecord { epoch: 1, train_loss: 0.5, val_loss: 0.25, lr: 1e-4 }];
        let text = history_csv(&h).unwrap();
        assert_eq!(text, "epoch,train_loss,val_loss,lr\n1,0.5,0.25,0.0001\n");
    }
}
