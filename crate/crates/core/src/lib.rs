//! Cloud and cloud-shadow segmentation toolkit for multispectral imagery.
//!
//! The crate is organised around five subsystems:
//!
//! - [`losscore`]: soft Jaccard, cross-entropy and the Filtered Jaccard Loss
//!   family with hand-derived gradients, binary and multiclass.
//! - [`sdaa`]: sunlight-direction-aware shadow augmentation (metadata parsing,
//!   shadow removal, cloud projection, gamma recolouring).
//! - [`raster`]: raster/mask containers, tiling and stitching, resizing,
//!   online geometric augmentation, dataset adapters, synthetic scenes.
//! - [`microfcn`]: a small fully-convolutional encoder/decoder with manual
//!   backpropagation, Adam and a plateau learning-rate schedule.
//! - [`metrics`]: scene-pooled confusion metrics and fold bookkeeping.

pub mod error;
pub mod losscore;
pub mod metrics;
pub mod microfcn;
pub mod raster;
pub mod sdaa;
pub mod seed;

pub use error::{Error, Result};
