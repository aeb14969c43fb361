use super::image::ImageRGB;
use crate::error::{Error, Result};

/// BT.601 luma on the `[16, 235]` scale.
pub fn rgb_to_y(img: &ImageRGB) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .map(|p| {
            let [r, g, b] = [p[0], p[1], p[2]].map(|v| v as f64 / 255.0);
            16.0 + 65.481 * r + 128.553 * g + 24.966 * b
        })
        .collect()
}

fn same_size(a: &ImageRGB, b: &ImageRGB) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Image(format!(
            "size mismatch: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Y-channel PSNR in dB after removing `shave` border pixels. Identical
/// inputs give `f64::INFINITY`.
pub fn psnr(a: &ImageRGB, b: &ImageRGB, shave: usize) -> Result<f64> {
    same_size(a, b)?;
    let (a, b) = (a.shave(shave)?, b.shave(shave)?);
    psnr_y(&rgb_to_y(&a), &rgb_to_y(&b))
}

/// PSNR of two equally sized luma planes, peak 255.
pub fn psnr_y(ya: &[f64], yb: &[f64]) -> Result<f64> {
    if ya.len() != yb.len() || ya.is_empty() {
        return Err(Error::Image(format!("luma planes of {} and {} values", ya.len(), yb.len())));
    }
    let mse = ya.iter().zip(yb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / ya.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    })
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; SSIM_WIN] {
    let c = (SSIM_WIN / 2) as f64;
    let mut w: [f64; SSIM_WIN] = std::array::from_fn(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64; SSIM_WIN]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WIN + 1, h - SSIM_WIN + 1);
    let mut mid = vec![0.0; ow * h];
    for y in 0..h {
        for xo in 0..ow {
            mid[y * ow + xo] = (0..SSIM_WIN).map(|t| k[t] * x[y * w + xo + t]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..SSIM_WIN).map(|t| k[t] * mid[(yo + t) * ow + xo]).sum();
        }
    }
    out
}

/// SSIM of two luma planes of size `w × h`, averaged over valid windows.
pub fn ssim_y(ya: &[f64], yb: &[f64], w: usize, h: usize) -> Result<f64> {
    if w < SSIM_WIN || h < SSIM_WIN {
        return Err(Error::Image(format!("ssim needs at least {SSIM_WIN}x{SSIM_WIN}, got {w}x{h}")));
    }
    let k = gaussian_window();
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(ya, w, h, &k);
    let mu_b = filter_valid(yb, w, h, &k);
    let s_aa = filter_valid(&prod(ya, ya), w, h, &k);
    let s_bb = filter_valid(&prod(yb, yb), w, h, &k);
    let s_ab = filter_valid(&prod(ya, yb), w, h, &k);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = s_aa[i] - ma * ma;
            let vb = s_bb[i] - mb * mb;
            let cov = s_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Y-channel SSIM.
pub fn ssim(a: &ImageRGB, b: &ImageRGB) -> Result<f64> {
    same_size(a, b)?;
    ssim_y(&rgb_to_y(a), &rgb_to_y(b), a.width(), a.height())
}
