use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam with bias correction. Moment buffers are allocated lazily on the
/// first step and must keep matching the parameter list afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.first, &self.second)
    }

    /// Rebuilds a state from saved moments (checkpoint resume).
    pub fn from_parts(config: AdamConfig, step: u64, first: Vec<Vec<T>>, second: Vec<Vec<T>>) -> Result<Self> {
        if first.len() != second.len() || first.iter().zip(&second).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::shape("AdamState::from_parts", "moment buffers disagree"));
        }
        Ok(Self {
            config,
            step,
            first,
            second,
        })
    }

    /// One update of every parameter at the configured learning rate.
    /// Parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor4<T>]) -> Result<()> {
        let lrs = vec![self.config.lr; params.len()];
        self.step_with_lrs(params, &lrs)
    }

    /// Like [`AdamState::step`] with a separate learning rate per parameter.
    pub fn step_with_lrs(&mut self, params: &mut [&mut Tensor4<T>], lrs: &[f64]) -> Result<()> {
        if lrs.len() != params.len() {
            return Err(Error::shape("adam_step", format!("{} lrs for {} params", lrs.len(), params.len())));
        }
        if self.first.is_empty() && !params.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::shape("adam_step", "parameter list changed between steps"));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let t = self.step as i32;
        let c1 = T::of(1.0 - beta1.powi(t));
        let c2 = T::of(1.0 - beta2.powi(t));
        let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(eps));
        let one = T::one();
        for (((p, m), v), &lr) in params.iter_mut().zip(&mut self.first).zip(&mut self.second).zip(lrs) {
            let lr = T::of(lr);
            let grad = p.grad().map(|g| g.to_vec());
            let data = p.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(T::zero(), |g| g[i]);
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
