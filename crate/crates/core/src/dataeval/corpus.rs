//! Procedural training images, for running the pipeline without a
//! downloaded dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::ImageRGB;
use crate::error::Result;

type Rgb = [f64; 3];

enum Layer {
    Rect { cx: f64, cy: f64, hw: f64, hh: f64, cos: f64, sin: f64, color: Rgb },
    Disk { cx: f64, cy: f64, r: f64, color: Rgb },
    Stripes { x0: f64, y0: f64, x1: f64, y1: f64, period: f64, cos: f64, sin: f64, a: Rgb, b: Rgb },
    Line { x0: f64, y0: f64, dx: f64, dy: f64, half: f64, color: Rgb },
}

impl Layer {
    fn sample(&self, x: f64, y: f64) -> Option<Rgb> {
        match *self {
            Layer::Rect { cx, cy, hw, hh, cos, sin, color } => {
                let (u, v) = ((x - cx) * cos + (y - cy) * sin, -(x - cx) * sin + (y - cy) * cos);
                (u.abs() <= hw && v.abs() <= hh).then_some(color)
            }
            Layer::Disk { cx, cy, r, color } => ((x - cx).powi(2) + (y - cy).powi(2) <= r * r).then_some(color),
            Layer::Stripes { x0, y0, x1, y1, period, cos, sin, a, b } => {
                if x < x0 || x > x1 || y < y0 || y > y1 {
                    return None;
                }
                let t = 0.5 + 0.5 * (std::f64::consts::TAU * (x * cos + y * sin) / period).sin();
                Some(std::array::from_fn(|c| a[c] * t + b[c] * (1.0 - t)))
            }
            Layer::Line { x0, y0, dx, dy, half, color } => {
                let len2 = dx * dx + dy * dy;
                let t = (((x - x0) * dx + (y - y0) * dy) / len2).clamp(0.0, 1.0);
                let (px, py) = (x0 + t * dx - x, y0 + t * dy - y);
                (px * px + py * py <= half * half).then_some(color)
            }
        }
    }
}

fn color<R: Rng>(rng: &mut R) -> Rgb {
    std::array::from_fn(|_| rng.gen::<f64>())
}

/// One image of `w × h`: a gradient background under a stack of shapes,
/// stripe patches and lines, rendered with 4×4 supersampling.
pub fn synthetic_image<R: Rng>(w: usize, h: usize, rng: &mut R) -> Result<ImageRGB> {
    let (fw, fh) = (w as f64, h as f64);
    let (bg0, bg1) = (color(rng), color(rng));
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (gc, gs) = (angle.cos(), angle.sin());
    let n_layers = rng.gen_range(6..12);
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let cx = rng.gen_range(0.0..fw);
        let cy = rng.gen_range(0.0..fh);
        let th: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        layers.push(match rng.gen_range(0..4) {
            0 => Layer::Rect {
                cx,
                cy,
                hw: rng.gen_range(2.0..fw / 3.0),
                hh: rng.gen_range(2.0..fh / 3.0),
                cos: th.cos(),
                sin: th.sin(),
                color: color(rng),
            },
            1 => Layer::Disk {
                cx,
                cy,
                r: rng.gen_range(2.0..fw.min(fh) / 4.0),
                color: color(rng),
            },
            2 => {
                let (sw, sh) = (rng.gen_range(fw / 6.0..fw / 2.0), rng.gen_range(fh / 6.0..fh / 2.0));
                Layer::Stripes {
                    x0: cx - sw,
                    y0: cy - sh,
                    x1: cx + sw,
                    y1: cy + sh,
                    period: rng.gen_range(3.0..12.0),
                    cos: th.cos(),
                    sin: th.sin(),
                    a: color(rng),
                    b: color(rng),
                }
            }
            _ => {
                let len = rng.gen_range(fw / 4.0..fw);
                Layer::Line {
                    x0: cx,
                    y0: cy,
                    dx: len * th.cos(),
                    dy: len * th.sin(),
                    half: rng.gen_range(0.5..2.5),
                    color: color(rng),
                }
            }
        });
    }

    const SS: usize = 4;
    let mut data = Vec::with_capacity(w * h * 3);
    for py in 0..h {
        for px in 0..w {
            let mut acc = [0.0; 3];
            for sy in 0..SS {
                for sx in 0..SS {
                    let x = px as f64 + (sx as f64 + 0.5) / SS as f64;
                    let y = py as f64 + (sy as f64 + 0.5) / SS as f64;
                    let t = (((x / fw - 0.5) * gc + (y / fh - 0.5) * gs) + 0.75).clamp(0.0, 1.5) / 1.5;
                    let mut c: Rgb = std::array::from_fn(|k| bg0[k] * (1.0 - t) + bg1[k] * t);
                    for l in &layers {
                        if let Some(v) = l.sample(x, y) {
                            c = v;
                        }
                    }
                    (0..3).for_each(|k| acc[k] += c[k]);
                }
            }
            data.extend(acc.map(|v| (v / (SS * SS) as f64 * 255.0).round().clamp(0.0, 255.0) as u8));
        }
    }
    ImageRGB::new(w, h, data)
}

/// `n` procedural images; image `i` depends only on `(seed, i)`.
pub fn synthetic_corpus(n: usize, w: usize, h: usize, seed: u64) -> Result<Vec<ImageRGB>> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            synthetic_image(w, h, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_varied() {
        let a = synthetic_corpus(3, 32, 24, 5).unwrap();
        assert_eq!(a, synthetic_corpus(3, 32, 24, 5).unwrap());
        assert_ne!(a[0], a[1]);
        assert_eq!((a[2].width(), a[2].height()), (32, 24));
        assert_eq!(synthetic_corpus(2, 32, 24, 5).unwrap()[1], a[1]);
    }
}
