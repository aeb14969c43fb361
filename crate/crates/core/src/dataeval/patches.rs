use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{images_to_tensor, ImageRGB};
use super::resize::bicubic_resize;
use crate::diffcore::Tensor4;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A high-resolution image and its bicubic downscale by `scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct LrHrPair {
    pub lr: ImageRGB,
    pub hr: ImageRGB,
    pub scale: usize,
}

impl LrHrPair {
    /// Crops `hr` to a multiple of `scale` and downscales it.
    pub fn from_hr(hr: &ImageRGB, scale: usize) -> Result<Self> {
        if scale == 0 {
            return Err(Error::InvalidArgument("scale must be >= 1".into()));
        }
        let (w, h) = (hr.width() / scale, hr.height() / scale);
        if w == 0 || h == 0 {
            return Err(Error::Image(format!(
                "{}x{} is too small for scale {scale}",
                hr.width(),
                hr.height()
            )));
        }
        let hr = hr.crop(0, 0, w * scale, h * scale)?;
        let lr = bicubic_resize(&hr, w, h)?;
        Ok(Self { lr, hr, scale })
    }
}

/// Aligned crops: `lr` is `p × p` at LR origin `origin`, `hr` is the
/// `rp × rp` crop at `scale · origin`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub lr: ImageRGB,
    pub hr: ImageRGB,
    pub origin: (usize, usize),
}

/// `n` crops at uniformly drawn LR origins.
pub fn sample_from_pair<R: Rng + ?Sized>(pair: &LrHrPair, p: usize, n: usize, rng: &mut R) -> Result<Vec<PatchPair>> {
    let (w, h) = (pair.lr.width(), pair.lr.height());
    if p == 0 || p > w || p > h {
        return Err(Error::Image(format!(
            "HR image {}x{} is smaller than a {}px patch",
            pair.hr.width(),
            pair.hr.height(),
            p * pair.scale
        )));
    }
    let r = pair.scale;
    (0..n)
        .map(|_| {
            let x = rng.gen_range(0..=w - p);
            let y = rng.gen_range(0..=h - p);
            Ok(PatchPair {
                lr: pair.lr.crop(x, y, p, p)?,
                hr: pair.hr.crop(x * r, y * r, p * r, p * r)?,
                origin: (x, y),
            })
        })
        .collect()
}

pub fn sample_patches(hr: &ImageRGB, scale: usize, p: usize, n: usize, seed: u64) -> Result<Vec<PatchPair>> {
    let pair = LrHrPair::from_hr(hr, scale)?;
    sample_from_pair(&pair, p, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `(lr, hr)` batch tensors in `[0, 1]`.
pub fn patches_to_tensors<T: Scalar>(patches: &[PatchPair]) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let lr: Vec<&ImageRGB> = patches.iter().map(|p| &p.lr).collect();
    let hr: Vec<&ImageRGB> = patches.iter().map(|p| &p.hr).collect();
    Ok((images_to_tensor(&lr)?, images_to_tensor(&hr)?))
}
