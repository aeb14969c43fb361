//! Dense tensors, the reverse-mode tape, and the Adam optimizer.

mod adam;
mod graph;
pub mod kernels;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{select_path, Graph, NodeId};
pub use tensor::{numel, Shape, Tensor4};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Convolution parameters: weight `(o, i, k, k)` and one bias per output.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeight<T> {
    pub weight: Tensor4<T>,
    pub bias: Tensor4<T>,
}

impl<T: Scalar> ConvWeight<T> {
    pub fn new(weight: Tensor4<T>, bias: Tensor4<T>) -> Result<Self> {
        let [o, i, k, k2] = weight.shape();
        if k != k2 || !matches!(k, 1 | 3 | 5) {
            return Err(Error::UnsupportedKernel(k.max(k2)));
        }
        if o == 0 || i == 0 {
            return Err(Error::shape("ConvWeight", format!("empty weight {:?}", weight.shape())));
        }
        if bias.len() != o {
            return Err(Error::shape("ConvWeight", format!("{} biases for {o} outputs", bias.len())));
        }
        Ok(Self { weight, bias })
    }

    /// He-uniform weights scaled by `gain`, zero bias; both trainable.
    pub fn random<R: Rng + ?Sized>(out_ch: usize, in_ch: usize, k: usize, gain: f64, rng: &mut R) -> Result<Self> {
        let fan_in = (in_ch * k * k) as f64;
        let bound = gain * (6.0 / fan_in).sqrt();
        let weight = Tensor4::uniform([out_ch, in_ch, k, k], -bound, bound, rng).trainable();
        let bias = Tensor4::zeros([out_ch, 1, 1, 1]).trainable();
        Self::new(weight, bias)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Records weight and bias on the tape; returns `(w, b)` node ids.
    pub fn register(&self, g: &mut Graph<T>) -> (NodeId, NodeId) {
        (g.leaf(&self.weight), g.leaf(&self.bias))
    }

    pub fn cast<U: Scalar>(&self) -> ConvWeight<U> {
        ConvWeight {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}
