//! Differentiable latency predictor.

mod mlp;
mod train;

pub use mlp::{LinearLayer, NormalizationSpec, Prediction, SpeedIds, SpeedMLP, DEFAULT_HIDDEN, FORMAT_VERSION};
pub use train::{mape, prediction_table, train_speed_model, SpeedTrainConfig, SpeedTrainReport};
