//! Desk-scale fully convolutional segmentation network trained from scratch
//! on the CPU: layers with hand-written backward passes, Adam with a
//! plateau schedule, checkpoints and patch-wise scene inference.

pub mod checkpoint;
pub mod layers;
mod model;
mod optim;
mod predict;
mod tensor;
mod train;

pub use model::{Cache, Gradients, Head, Model, ModelConfig};
pub use optim::{Adam, PlateauSchedule};
pub use predict::{predict_normalized, predict_scene, PredictConfig, ScenePrediction};
pub use tensor::Tensor;
pub use train::{evaluate_loss, history_csv, train, train_with, EpochRecord, Sample, TrainConfig, TrainOutcome};
