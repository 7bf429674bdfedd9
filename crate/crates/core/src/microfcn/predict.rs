use serde::{Deserialize, Serialize};

use super::model::{Head, Model};
use super::tensor::Tensor;
use crate::error::{config, shape, Result};
use crate::raster::{
    argmax_masks, binarize, extract_patches, normalize, resize_bilinear, stitch, Mask, PatchMode, Raster, RawRaster, SceneMap,
};

/// Inference settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Square patch side; clamped to the shorter scene side.
    pub patch_size: usize,
    pub overlap: PatchMode,
    /// Side the patches are resized to before the forward pass. `None`
    /// keeps the patch size, rounded up to the model's downsampling factor.
    pub input_size: Option<usize>,
    /// Inclusive foreground threshold of a sigmoid head.
    pub threshold: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { patch_size: 384, overlap: PatchMode::NonOverlap, input_size: None, threshold: 0.5 }
    }
}

impl PredictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.input_size == Some(0) {
            return Err(config("patch and input sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(config(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        Ok(())
    }
}

/// Stitched probabilities and the masks derived from them.
///
/// A sigmoid head yields one foreground mask; a softmax head yields one
/// mask per class from the per-pixel argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePrediction {
    pub map: SceneMap,
    pub masks: Vec<Mask>,
}

/// Predict a scene of raw digital numbers.
pub fn predict_scene(model: &Model, raw: &RawRaster, cfg: &PredictConfig) -> Result<ScenePrediction> {
    predict_normalized(model, &normalize(raw), cfg)
}

/// Patch, forward, stitch and threshold an already normalised scene.
pub fn predict_normalized(model: &Model, image: &Raster<f64>, cfg: &PredictConfig) -> Result<ScenePrediction> {
    cfg.validate()?;
    let (h, w) = image.dims();
    if image.channels() != model.config().input_channels {
        return Err(shape(format!("model expects {} bands, scene has {}", model.config().input_channels, image.channels())));
    }
    let ps = cfg.patch_size.min(h).min(w);
    let f = model.config().downsampling_factor();
    let side = cfg.input_size.unwrap_or(ps).div_ceil(f) * f;
    let mut outputs = Vec::new();
    for origin in extract_patches(h, w, ps, cfg.overlap)? {
        let patch = image.crop(origin, ps, ps)?;
        let input = if side == ps { patch } else { resize_bilinear(&patch, side, side)? };
        let probs = model.forward(&Tensor::from_raster(&input))?.to_raster();
        let probs = if side == ps { probs } else { resize_bilinear(&probs, ps, ps)? };
        outputs.push((origin, probs));
    }
    let map = stitch(&outputs, h, w)?;
    let masks = match model.config().head {
        Head::Sigmoid => vec![binarize(&map.map, cfg.threshold)],
        Head::Softmax => argmax_masks(&map.map),
    };
    Ok(ScenePrediction { map, masks })
}
