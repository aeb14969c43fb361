//! Raw forward/backward kernels over flat row-major buffers.
//!
//! All convolutions are stride 1 with zero padding `(k - 1) / 2`, so spatial
//! size is preserved. Loops are ordered so the innermost loop walks a
//! contiguous row.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub k: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.k as isize - 1) / 2
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Valid `(dst_start, src_start, len)` span of a row shifted by `d`.
#[inline]
fn span(len: usize, d: isize) -> (usize, usize, usize) {
    if d >= 0 {
        let d = d as usize;
        if d >= len {
            (0, 0, 0)
        } else {
            (0, d, len - d)
        }
    } else {
        let d = (-d) as usize;
        if d >= len {
            (0, 0, 0)
        } else {
            (d, 0, len - d)
        }
    }
}

/// Accumulates `w * src(plane shifted by (dy, dx))` into `dst`.
#[inline]
fn shifted_axpy<T: Scalar>(
    dst: &mut [T],
    src: &[T],
    w: T,
    height: usize,
    width: usize,
    dy: isize,
    dx: isize,
) {
    if dy == 0 && dx == 0 {
        dst.iter_mut().zip(src).for_each(|(d, &s)| *d += w * s);
        return;
    }
    let (y0, sy0, ny) = span(height, dy);
    let (x0, sx0, nx) = span(width, dx);
    for r in 0..ny {
        let d = &mut dst[(y0 + r) * width + x0..(y0 + r) * width + x0 + nx];
        let s = &src[(sy0 + r) * width + sx0..(sy0 + r) * width + sx0 + nx];
        d.iter_mut().zip(s).for_each(|(d, &s)| *d += w * s);
    }
}

/// Dot product of `a` with `b` shifted by `(dy, dx)` over the valid region.
#[inline]
fn shifted_dot<T: Scalar>(a: &[T], b: &[T], height: usize, width: usize, dy: isize, dx: isize) -> T {
    let (y0, sy0, ny) = span(height, dy);
    let (x0, sx0, nx) = span(width, dx);
    let mut acc = T::zero();
    for r in 0..ny {
        let ra = &a[(y0 + r) * width + x0..(y0 + r) * width + x0 + nx];
        let rb = &b[(sy0 + r) * width + sx0..(sy0 + r) * width + sx0 + nx];
        acc += ra.iter().zip(rb).fold(T::zero(), |s, (&x, &y)| s + x * y);
    }
    acc
}

/// One output plane: `bias + Σ_i w[o, i] ⊛ input[b, i]`, written into `dst`.
#[inline]
pub(crate) fn conv2d_plane<T: Scalar>(
    input: &[T],
    weight: &[T],
    bias: T,
    dims: &ConvDims,
    b: usize,
    o: usize,
    dst: &mut [T],
) {
    let plane = dims.plane();
    let kk = dims.k * dims.k;
    let pad = dims.pad();
    dst.iter_mut().for_each(|v| *v = bias);
    for i in 0..dims.in_ch {
        let src = &input[(b * dims.in_ch + i) * plane..(b * dims.in_ch + i + 1) * plane];
        let wk = &weight[(o * dims.in_ch + i) * kk..(o * dims.in_ch + i + 1) * kk];
        for ky in 0..dims.k {
            for kx in 0..dims.k {
                let w = wk[ky * dims.k + kx];
                shifted_axpy(
                    dst,
                    src,
                    w,
                    dims.height,
                    dims.width,
                    ky as isize - pad,
                    kx as isize - pad,
                );
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(input: &[T], weight: &[T], bias: &[T], dims: &ConvDims) -> Vec<T> {
    let plane = dims.plane();
    let mut out = vec![T::zero(); dims.batch * dims.out_ch * plane];
    for b in 0..dims.batch {
        for o in 0..dims.out_ch {
            let dst = &mut out[(b * dims.out_ch + o) * plane..(b * dims.out_ch + o + 1) * plane];
            conv2d_plane(input, weight, bias[o], dims, b, o, dst);
        }
    }
    out
}

pub fn conv2d_backward_input<T: Scalar>(grad_out: &[T], weight: &[T], dims: &ConvDims) -> Vec<T> {
    let plane = dims.plane();
    let kk = dims.k * dims.k;
    let pad = dims.pad();
    let mut gin = vec![T::zero(); dims.batch * dims.in_ch * plane];
    for b in 0..dims.batch {
        for i in 0..dims.in_ch {
            let dst = &mut gin[(b * dims.in_ch + i) * plane..(b * dims.in_ch + i + 1) * plane];
            for o in 0..dims.out_ch {
                let g = &grad_out[(b * dims.out_ch + o) * plane..(b * dims.out_ch + o + 1) * plane];
                let wk = &weight[(o * dims.in_ch + i) * kk..(o * dims.in_ch + i + 1) * kk];
                for ky in 0..dims.k {
                    for kx in 0..dims.k {
                        // out[y] reads in[y + d], so in[y'] receives g[y' - d].
                        shifted_axpy(
                            dst,
                            g,
                            wk[ky * dims.k + kx],
                            dims.height,
                            dims.width,
                            pad - ky as isize,
                            pad - kx as isize,
                        );
                    }
                }
            }
        }
    }
    gin
}

pub fn conv2d_backward_weight<T: Scalar>(grad_out: &[T], input: &[T], dims: &ConvDims) -> Vec<T> {
    let plane = dims.plane();
    let kk = dims.k * dims.k;
    let pad = dims.pad();
    let mut gw = vec![T::zero(); dims.out_ch * dims.in_ch * kk];
    for o in 0..dims.out_ch {
        for i in 0..dims.in_ch {
            let dst = &mut gw[(o * dims.in_ch + i) * kk..(o * dims.in_ch + i + 1) * kk];
            for b in 0..dims.batch {
                let g = &grad_out[(b * dims.out_ch + o) * plane..(b * dims.out_ch + o + 1) * plane];
                let x = &input[(b * dims.in_ch + i) * plane..(b * dims.in_ch + i + 1) * plane];
                for ky in 0..dims.k {
                    for kx in 0..dims.k {
                        dst[ky * dims.k + kx] += shifted_dot(
                            g,
                            x,
                            dims.height,
                            dims.width,
                            ky as isize - pad,
                            kx as isize - pad,
                        );
                    }
                }
            }
        }
    }
    gw
}

/// Per-channel sums over batch and space.
pub fn channel_sums<T: Scalar>(grad: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); channels];
    for b in 0..batch {
        for (c, acc) in out.iter_mut().enumerate() {
            let s = &grad[(b * channels + c) * plane..(b * channels + c + 1) * plane];
            *acc += s.iter().copied().sum::<T>();
        }
    }
    out
}

/// Depth-to-space: `out[b, c, r·i + di, r·j + dj] = in[b, c·r² + di·r + dj, i, j]`.
pub fn pixel_shuffle<T: Scalar>(input: &[T], shape: [usize; 4], r: usize) -> Vec<T> {
    let [bs, cs, hs, ws] = shape;
    let oc = cs / (r * r);
    let (oh, ow) = (hs * r, ws * r);
    let mut out = vec![T::zero(); input.len()];
    for b in 0..bs {
        for c in 0..oc {
            for di in 0..r {
                for dj in 0..r {
                    let src_c = c * r * r + di * r + dj;
                    let src = &input[(b * cs + src_c) * hs * ws..(b * cs + src_c + 1) * hs * ws];
                    let dst_base = (b * oc + c) * oh * ow;
                    for i in 0..hs {
                        let row = dst_base + (r * i + di) * ow;
                        for j in 0..ws {
                            out[row + r * j + dj] = src[i * ws + j];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Space-to-depth, the exact inverse of [`pixel_shuffle`]. `shape` is the
/// shape of the (large) input.
pub fn pixel_unshuffle<T: Scalar>(input: &[T], shape: [usize; 4], r: usize) -> Vec<T> {
    let [bs, cs, hs, ws] = shape;
    let (ih, iw) = (hs / r, ws / r);
    let oc = cs * r * r;
    let mut out = vec![T::zero(); input.len()];
    for b in 0..bs {
        for c in 0..cs {
            let src_base = (b * cs + c) * hs * ws;
            for di in 0..r {
                for dj in 0..r {
                    let dst_c = c * r * r + di * r + dj;
                    let dst = (b * oc + dst_c) * ih * iw;
                    for i in 0..ih {
                        for j in 0..iw {
                            out[dst + i * iw + j] = input[src_base + (r * i + di) * ws + r * j + dj];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `out[r, o] = Σ_i x[r, i] · w[o, i] + b[o]`.
pub fn linear_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], rows: usize, inp: usize, out: usize) -> Vec<T> {
    let mut y = vec![T::zero(); rows * out];
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        for o in 0..out {
            let wr = &w[o * inp..(o + 1) * inp];
            y[r * out + o] = b[o] + xr.iter().zip(wr).fold(T::zero(), |s, (&a, &c)| s + a * c);
        }
    }
    y
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn linear_backward<T: Scalar>(
    g: &[T],
    x: &[T],
    w: &[T],
    rows: usize,
    inp: usize,
    out: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); rows * inp];
    let mut gw = vec![T::zero(); out * inp];
    let mut gb = vec![T::zero(); out];
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        let gxr = &mut gx[r * inp..(r + 1) * inp];
        for o in 0..out {
            let go = g[r * out + o];
            if go == T::zero() {
                continue;
            }
            gb[o] += go;
            let wr = &w[o * inp..(o + 1) * inp];
            gxr.iter_mut().zip(wr).for_each(|(d, &c)| *d += go * c);
            let gwr = &mut gw[o * inp..(o + 1) * inp];
            gwr.iter_mut().zip(xr).for_each(|(d, &c)| *d += go * c);
        }
    }
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_clips_shifts() {
        assert_eq!(span(5, 0), (0, 0, 5));
        assert_eq!(span(5, 1), (0, 1, 4));
        assert_eq!(span(5, -2), (2, 0, 3));
        assert_eq!(span(2, 3), (0, 0, 0));
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let dims = ConvDims {
            batch: 1,
            in_ch: 1,
            out_ch: 1,
            height: 3,
            width: 3,
            k: 3,
        };
        let out = conv2d_forward(&[1.0f64; 9], &[1.0; 9], &[0.0], &dims);
        assert_eq!(out, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }
}
