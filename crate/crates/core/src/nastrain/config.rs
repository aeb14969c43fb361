use crate::diffcore::AdamConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    /// Latency threshold in ms.
    pub v_t: f64,
    pub gamma: f64,
    pub search_epochs: usize,
    pub finetune_epochs: usize,
    /// Learning rate of conv weights and biases.
    pub lr: f64,
    /// Learning rate of the mask vectors; `None` uses `lr`.
    pub mask_lr: Option<f64>,
    /// Learning rate of the path parameters; `None` uses `lr`.
    pub alpha_lr: Option<f64>,
    pub search_halve_epochs: Vec<usize>,
    pub finetune_halve_epochs: Vec<usize>,
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// LR patch side; HR patches are `scale` times larger.
    pub patch_size: usize,
    pub patches_per_epoch: usize,
    /// Weight-only epochs run before the search proper.
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            v_t: 40.0,
            gamma: 0.01,
            search_epochs: 20,
            finetune_epochs: 30,
            lr: 1e-3,
            mask_lr: Some(2e-3),
            alpha_lr: Some(1e-2),
            search_halve_epochs: vec![10, 16],
            finetune_halve_epochs: vec![20, 25],
            adam: AdamConfig::default(),
            batch_size: 8,
            patch_size: 48,
            patches_per_epoch: 200,
            warmup_epochs: 0,
            seed: 0,
        }
    }
}

impl SearchConfig {
    /// One learning rate of 1e-4 for every group. Sized for long runs; at
    /// desk scale the masks barely move under it.
    pub fn single_lr() -> Self {
        Self {
            lr: 1e-4,
            mask_lr: None,
            alpha_lr: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.v_t > 0.0) {
            return bad(format!("v_t must be > 0, got {}", self.v_t));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma must be finite and >= 0, got {}", self.gamma));
        }
        if self.search_epochs == 0 {
            return bad("search_epochs must be >= 1".into());
        }
        for lr in [Some(self.lr), self.mask_lr, self.alpha_lr].into_iter().flatten() {
            if !(lr >= 0.0) || !lr.is_finite() {
                return bad(format!("learning rates must be finite and >= 0, got {lr}"));
            }
        }
        if self.batch_size == 0 || self.patch_size == 0 || self.patches_per_epoch == 0 {
            return bad("batch_size, patch_size and patches_per_epoch must be >= 1".into());
        }
        Ok(())
    }

    pub fn mask_lr(&self) -> f64 {
        self.mask_lr.unwrap_or(self.lr)
    }

    pub fn alpha_lr(&self) -> f64 {
        self.alpha_lr.unwrap_or(self.lr)
    }
}

/// `0.5^k` where `k` counts the entries of `halve_at` that are `<= epoch`.
pub fn lr_factor(epoch: usize, halve_at: &[usize]) -> f64 {
    0.5f64.powi(halve_at.iter().filter(|&&h| epoch >= h).count() as i32)
}
