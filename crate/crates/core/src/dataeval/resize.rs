use super::image::ImageRGB;
use crate::error::{Error, Result};

/// Catmull-Rom cubic (`a = -0.5`).
pub fn catmull_rom(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per output sample: first source index and normalized tap weights.
/// When shrinking, the kernel is stretched by the scale factor so it also
/// acts as the anti-aliasing filter.
fn contributions(n_in: usize, n_out: usize) -> Vec<(isize, Vec<f64>)> {
    let scale = n_in as f64 / n_out as f64;
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut w: Vec<f64> = (lo..=hi).map(|i| catmull_rom((i as f64 - center) / stretch)).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            (lo, w)
        })
        .collect()
}

fn resample(src: &[f64], n_in: usize, stride: usize, count: usize, taps: &[(isize, Vec<f64>)], out: &mut [f64]) {
    // `src` holds `count` lines of `n_in` samples spaced by `stride`; lines
    // are consecutive in both src and out.
    let n_out = taps.len();
    for line in 0..count {
        let (src_base, out_base) = if stride == 1 { (line * n_in, line * n_out) } else { (line, line) };
        for (o, (lo, w)) in taps.iter().enumerate() {
            let mut acc = 0.0;
            for (t, &wt) in w.iter().enumerate() {
                let i = (lo + t as isize).clamp(0, n_in as isize - 1) as usize;
                acc += wt * src[src_base + i * stride];
            }
            out[out_base + o * stride] = acc;
        }
    }
}

/// Resizes one `[0, 1]` plane; no clipping.
pub fn resize_plane(plane: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let tx = contributions(w, out_w);
    let ty = contributions(h, out_h);
    let mut mid = vec![0.0; out_w * h];
    resample(plane, w, 1, h, &tx, &mut mid);
    let mut out = vec![0.0; out_w * out_h];
    resample(&mid, h, out_w, out_w, &ty, &mut out);
    out
}

/// Bicubic resize with clamped edges; output rounded and clipped to 8 bits.
pub fn bicubic_resize(img: &ImageRGB, out_w: usize, out_h: usize) -> Result<ImageRGB> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Image(format!("cannot resize to {out_w}x{out_h}")));
    }
    let planes = img.planes().map(|p| resize_plane(&p, img.width(), img.height(), out_w, out_h));
    ImageRGB::from_planes(out_w, out_h, &planes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(catmull_rom(0.0), 1.0);
        assert_eq!(catmull_rom(1.0), 0.0);
        assert_eq!(catmull_rom(2.0), 0.0);
        assert!((catmull_rom(0.5) - 0.5625).abs() < 1e-15);
        assert!((catmull_rom(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn same_size_is_identity() {
        let data: Vec<u8> = (0..7 * 5 * 3).map(|i| (i * 53 % 256) as u8).collect();
        let img = ImageRGB::new(7, 5, data).unwrap();
        assert_eq!(bicubic_resize(&img, 7, 5).unwrap(), img);
    }

    #[test]
    fn constant_stays_constant() {
        let img = ImageRGB::filled(9, 6, [200, 17, 90]).unwrap();
        assert_eq!(bicubic_resize(&img, 4, 3).unwrap(), ImageRGB::filled(4, 3, [200, 17, 90]).unwrap());
        assert_eq!(bicubic_resize(&img, 19, 13).unwrap(), ImageRGB::filled(19, 13, [200, 17, 90]).unwrap());
    }
}
