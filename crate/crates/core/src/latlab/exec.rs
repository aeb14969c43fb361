//! Inference-only block kernels, in fused and unfused form.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{WidthConfig, BLOCK_CONVS, BLOCK_KERNELS};
use crate::diffcore::kernels::{self, ConvDims};
use crate::diffcore::{ConvWeight, Tensor4};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    /// Every intermediate (conv output, activation, residual sum) is materialized.
    Off,
    /// conv-1 + ReLU in one pass; residual add folded into conv-3's write.
    On,
}

/// A block instance with deterministic weights for one width configuration.
///
/// Conv-3 writes `f4` channels; output channel `j` is added onto trunk
/// channel `j % f1`, so any sampled `(f1, f4)` pair keeps the block
/// shape-preserving and chainable.
#[derive(Clone, Debug)]
pub struct BenchBlock<T> {
    pub config: WidthConfig,
    convs: [ConvWeight<T>; BLOCK_CONVS],
}

impl<T: Scalar> BenchBlock<T> {
    pub fn new(config: WidthConfig, seed: u64) -> Result<Self> {
        config.validate(None)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = config.f;
        let mut mk = |l: usize| -> Result<ConvWeight<T>> {
            let mut c = ConvWeight::random(f[l + 1], f[l], BLOCK_KERNELS[l], 0.5, &mut rng)?;
            let bias = Tensor4::uniform([f[l + 1], 1, 1, 1], -0.1, 0.1, &mut rng);
            c.bias = bias;
            Ok(c)
        };
        let convs = [mk(0)?, mk(1)?, mk(2)?];
        Ok(Self { config, convs })
    }

    /// Replaces the generated weights (hand-built test cases).
    pub fn with_weights(config: WidthConfig, convs: [ConvWeight<T>; BLOCK_CONVS]) -> Result<Self> {
        for (l, c) in convs.iter().enumerate() {
            if c.in_channels() != config.f[l] || c.out_channels() != config.f[l + 1] || c.kernel() != BLOCK_KERNELS[l] {
                return Err(Error::shape("BenchBlock", format!("conv {} does not match {:?}", l + 1, config.f)));
            }
        }
        Ok(Self { config, convs })
    }

    fn dims(&self, l: usize, batch: usize, h: usize, w: usize) -> ConvDims {
        ConvDims {
            batch,
            in_ch: self.config.f[l],
            out_ch: self.config.f[l + 1],
            height: h,
            width: w,
            k: BLOCK_KERNELS[l],
        }
    }

    pub fn execute(&self, input: &Tensor4<T>, fusion: Fusion) -> Result<Tensor4<T>> {
        let [b, c, h, w] = input.shape();
        if c != self.config.f[0] {
            return Err(Error::shape(
                "execute_block",
                format!("input has {c} channels, block expects {}", self.config.f[0]),
            ));
        }
        let out = match fusion {
            Fusion::Off => self.unfused(input.data(), b, h, w),
            Fusion::On => self.fused(input.data(), b, h, w),
        };
        Tensor4::from_vec([b, c, h, w], out)
    }

    fn conv(&self, l: usize, x: &[T], b: usize, h: usize, w: usize) -> Vec<T> {
        let c = &self.convs[l];
        kernels::conv2d_forward(x, c.weight.data(), c.bias.data(), &self.dims(l, b, h, w))
    }

    fn unfused(&self, x: &[T], b: usize, h: usize, w: usize) -> Vec<T> {
        let y1 = self.conv(0, x, b, h, w);
        let a1: Vec<T> = y1.iter().map(|&v| v.max(T::zero())).collect();
        let y2 = self.conv(1, &a1, b, h, w);
        let y3 = self.conv(2, &y2, b, h, w);
        let mut out = x.to_vec();
        self.residual_add(&mut out, &y3, b, h * w);
        out
    }

    fn residual_add(&self, out: &mut [T], y3: &[T], b: usize, plane: usize) {
        let (f1, f4) = (self.config.f[0], self.config.f[3]);
        for bi in 0..b {
            for j in 0..f4 {
                let d = &mut out[(bi * f1 + j % f1) * plane..(bi * f1 + j % f1 + 1) * plane];
                let s = &y3[(bi * f4 + j) * plane..(bi * f4 + j + 1) * plane];
                d.iter_mut().zip(s).for_each(|(d, &v)| *d = *d + v);
            }
        }
    }

    fn fused(&self, x: &[T], b: usize, h: usize, w: usize) -> Vec<T> {
        let plane = h * w;
        let f = self.config.f;
        // conv-1 with the activation applied while the plane is hot
        let d0 = self.dims(0, b, h, w);
        let mut a1 = vec![T::zero(); b * f[1] * plane];
        for bi in 0..b {
            for o in 0..f[1] {
                let dst = &mut a1[(bi * f[1] + o) * plane..(bi * f[1] + o + 1) * plane];
                kernels::conv2d_plane(x, self.convs[0].weight.data(), self.convs[0].bias.data()[o], &d0, bi, o, dst);
                dst.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
        }
        let y2 = self.conv(1, &a1, b, h, w);
        // conv-3 accumulates straight into the residual output
        let d2 = self.dims(2, b, h, w);
        let mut out = x.to_vec();
        let mut scratch = vec![T::zero(); plane];
        for bi in 0..b {
            for o in 0..f[3] {
                kernels::conv2d_plane(&y2, self.convs[2].weight.data(), self.convs[2].bias.data()[o], &d2, bi, o, &mut scratch);
                let t = o % f[0];
                out[(bi * f[0] + t) * plane..(bi * f[0] + t + 1) * plane]
                    .iter_mut()
                    .zip(&scratch)
                    .for_each(|(d, &v)| *d = *d + v);
            }
        }
        out
    }
}

/// Conv followed by depth-to-space, with the conv writing each output plane
/// directly to its shuffled position (no intermediate `(B, C·r², H, W)` buffer).
pub fn conv_pixel_shuffle_fused<T: Scalar>(input: &Tensor4<T>, conv: &ConvWeight<T>, r: usize) -> Result<Tensor4<T>> {
    let [b, c, h, w] = input.shape();
    let o = conv.out_channels();
    if c != conv.in_channels() || r == 0 || o % (r * r) != 0 {
        return Err(Error::shape("conv_pixel_shuffle_fused", format!("input {:?}, conv {:?}, r={r}", input.shape(), conv.weight.shape())));
    }
    let dims = ConvDims {
        batch: b,
        in_ch: c,
        out_ch: o,
        height: h,
        width: w,
        k: conv.kernel(),
    };
    let oc = o / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::zero(); b * oc * oh * ow];
    let mut scratch = vec![T::zero(); h * w];
    for bi in 0..b {
        for ch in 0..o {
            kernels::conv2d_plane(input.data(), conv.weight.data(), conv.bias.data()[ch], &dims, bi, ch, &mut scratch);
            let (dc, di, dj) = (ch / (r * r), (ch % (r * r)) / r, ch % r);
            let base = (bi * oc + dc) * oh * ow;
            for i in 0..h {
                let row = base + (r * i + di) * ow;
                for j in 0..w {
                    out[row + r * j + dj] = scratch[i * w + j];
                }
            }
        }
    }
    Tensor4::from_vec([b, oc, oh, ow], out)
}
