use super::config::{lr_factor, SearchConfig};
use super::search::epoch_patches;
use crate::dataeval::{images_to_tensor, patches_to_tensors, psnr, tensor_to_image, ImageRGB, LrHrPair, PatchPair};
use crate::diffcore::{AdamState, Graph};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::srnet::CompactModel;

/// Runs `model` on one image and returns the 8-bit result.
pub fn upscale<T: Scalar>(model: &CompactModel<T>, img: &ImageRGB) -> Result<ImageRGB> {
    let x = images_to_tensor::<T>(&[img])?;
    tensor_to_image(&model.infer(&x)?, 0)
}

/// Mean Y-PSNR of the model on `patches`, with a border shave of `scale`.
/// Identical patches count as 100 dB so the mean stays finite.
pub fn mean_patch_psnr<T: Scalar>(model: &CompactModel<T>, patches: &[PatchPair]) -> Result<f64> {
    if patches.is_empty() {
        return Err(Error::InvalidArgument("no validation patches".into()));
    }
    let mut total = 0.0;
    for chunk in patches.chunks(16) {
        let (x, _) = patches_to_tensors::<T>(chunk)?;
        let y = model.infer(&x)?;
        for (b, p) in chunk.iter().enumerate() {
            total += psnr(&tensor_to_image(&y, b)?, &p.hr, model.scale)?.min(100.0);
        }
    }
    Ok(total / patches.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneRow {
    pub epoch: usize,
    pub l_sr: f64,
    pub val_psnr: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome<T> {
    /// The best-scoring weights, which may be the starting ones.
    pub model: CompactModel<T>,
    pub initial_psnr: f64,
    pub best_psnr: f64,
    /// `None` when no epoch beat the starting weights.
    pub best_epoch: Option<usize>,
    pub history: Vec<FinetuneRow>,
}

/// Weight-only L1 training of the extracted model. Validation PSNR is
/// checked after every epoch and the best weights are returned.
pub fn finetune<T: Scalar>(
    compact: &CompactModel<T>,
    data: &[LrHrPair],
    val: &[PatchPair],
    cfg: &SearchConfig,
) -> Result<FinetuneOutcome<T>> {
    let mut model = compact.clone();
    model.zero_grad();
    let initial_psnr = mean_patch_psnr(&model, val)?;
    let mut out = FinetuneOutcome {
        model: model.clone(),
        initial_psnr,
        best_psnr: initial_psnr,
        best_epoch: None,
        history: Vec::new(),
    };
    let mut adam = AdamState::new(cfg.adam);
    // Distinct data stream from the search epochs.
    let fcfg = SearchConfig {
        seed: cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
        ..cfg.clone()
    };
    for epoch in 0..cfg.finetune_epochs {
        let lr = cfg.lr * lr_factor(epoch, &cfg.finetune_halve_epochs);
        let (mut sum, mut n) = (0.0, 0usize);
        for batch in epoch_patches(data, &fcfg, epoch)?.chunks(cfg.batch_size) {
            let (x, y) = patches_to_tensors::<T>(batch)?;
            let mut g = Graph::new();
            let xn = g.constant(&x);
            let yn = g.constant(&y);
            let ids = model.register(&mut g);
            let sr = model.forward(&mut g, &ids, xn)?;
            let loss = g.mae(sr, yn)?;
            let lv = g.item(loss).to_f64_lossy();
            if !lv.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("fine-tune loss {lv}"),
                });
            }
            g.backward(loss)?;
            model.collect_grads(&g, &ids);
            let mut params = model.params_mut();
            let lrs = vec![lr; params.len()];
            adam.step_with_lrs(&mut params, &lrs)?;
            model.zero_grad();
            sum += lv;
            n += 1;
        }
        let val_psnr = mean_patch_psnr(&model, val)?;
        log::info!("finetune epoch {epoch}: l_sr {:.5} val psnr {val_psnr:.3} dB", sum / n as f64);
        out.history.push(FinetuneRow {
            epoch,
            l_sr: sum / n as f64,
            val_psnr,
        });
        if val_psnr > out.best_psnr {
            out.best_psnr = val_psnr;
            out.best_epoch = Some(epoch);
            out.model = model.clone();
        }
    }
    Ok(out)
}
