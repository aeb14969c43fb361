//! Width and depth architecture search for single-image super-resolution,
//! driven by a differentiable latency predictor.

pub mod dataeval;
pub mod diffcore;
pub mod container;
pub mod error;
pub mod latlab;
pub mod nastrain;
mod scalar;
pub mod speedmodel;
pub mod srnet;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor4f = diffcore::Tensor4<f32>;
pub type Tensor4d = diffcore::Tensor4<f64>;
pub type SupernetF32 = srnet::SupernetModel<f32>;
pub type SupernetF64 = srnet::SupernetModel<f64>;
pub type CompactF32 = srnet::CompactModel<f32>;
pub type CompactF64 = srnet::CompactModel<f64>;
pub type SpeedMLPF32 = speedmodel::SpeedMLP<f32>;
pub type SpeedMLPF64 = speedmodel::SpeedMLP<f64>;
