//! Tape-based reverse-mode differentiation over [`Tensor4`] values.
//!
//! A [`Graph`] records every operation as it is evaluated. Node ids are
//! handed out in creation order, which is also a valid topological order, so
//! [`Graph::backward`] walks the tape once in reverse.

use super::kernels::{self, ConvDims};
use super::tensor::{numel, Shape, Tensor4};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: NodeId, w: NodeId, b: NodeId, dims: ConvDims },
    ChannelScale { x: NodeId, s: NodeId },
    Relu { x: NodeId },
    Add { a: NodeId, b: NodeId },
    ScalarMul { x: NodeId, s: NodeId },
    Scale { x: NodeId, c: T },
    AddConst { x: NodeId },
    DivConst { x: NodeId, c: Vec<T> },
    Clamp { x: NodeId, lo: T, hi: T },
    PixelShuffle { x: NodeId, r: usize },
    PixelUnshuffle { x: NodeId, r: usize },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Mae { pred: NodeId, target: NodeId },
    Mse { pred: NodeId, target: NodeId },
    Sum { x: NodeId },
    Concat { parts: Vec<NodeId> },
    Binarize { x: NodeId },
    PathIndicator { alpha: NodeId },
    ScatterAddChannels { base: NodeId, src: NodeId, idx: Vec<usize> },
}

#[derive(Clone, Debug)]
struct Node<T> {
    shape: Shape,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation tape. Single-threaded; build a fresh one per forward pass.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Shape, value: Vec<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        debug_assert_eq!(numel(shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Records a tensor as a leaf; it receives gradients iff `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor4<T>) -> NodeId {
        self.push(t.shape(), t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: &Tensor4<T>) -> NodeId {
        self.push(t.shape(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn scalar_constant(&mut self, v: T) -> NodeId {
        self.push([1, 1, 1, 1], vec![v], Op::Leaf, false)
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn item(&self, id: NodeId) -> T {
        self.nodes[id.0].value[0]
    }

    pub fn tensor(&self, id: NodeId) -> Tensor4<T> {
        let n = &self.nodes[id.0];
        Tensor4::from_vec(n.shape, n.value.clone()).expect("node shape consistent")
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads[id.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Same-size convolution (stride 1, zero padding). `w` is `(o, i, k, k)`,
    /// `b` holds `o` values.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let [bs, c, h, wd] = self.shape(x);
        let [o, i, k, k2] = self.shape(w);
        if k != k2 || !matches!(k, 1 | 3 | 5) {
            return Err(Error::UnsupportedKernel(if k != k2 { k.max(k2) } else { k }));
        }
        if c != i {
            return Err(Error::shape("conv2d", format!("input has {c} channels, weight expects {i}")));
        }
        if numel(self.shape(b)) != o {
            return Err(Error::shape("conv2d", format!("bias length {} for {o} outputs", numel(self.shape(b)))));
        }
        let dims = ConvDims {
            batch: bs,
            in_ch: c,
            out_ch: o,
            height: h,
            width: wd,
            k,
        };
        let out = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b), &dims);
        let rg = self.rg(&[x, w, b]);
        Ok(self.push([bs, o, h, wd], out, Op::Conv2d { x, w, b, dims }, rg))
    }

    /// `out[b, c, h, w] = s[c] · x[b, c, h, w]`.
    pub fn channel_scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let shape = self.shape(x);
        let [bs, c, h, w] = shape;
        if numel(self.shape(s)) != c {
            return Err(Error::shape("channel_scale", format!("{} scales for {c} channels", numel(self.shape(s)))));
        }
        let plane = h * w;
        let scale = self.value(s).to_vec();
        let mut out = self.value(x).to_vec();
        for bi in 0..bs {
            for (ci, &sc) in scale.iter().enumerate() {
                out[(bi * c + ci) * plane..(bi * c + ci + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v = *v * sc);
            }
        }
        let rg = self.rg(&[x, s]);
        Ok(self.push(shape, out, Op::ChannelScale { x, s }, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x), out, Op::Relu { x }, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&p, &q)| p + q).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a), out, Op::Add { a, b }, rg))
    }

    /// Multiplies every element of `x` by the single-element node `s`.
    pub fn scalar_mul(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if numel(self.shape(s)) != 1 {
            return Err(Error::shape("scalar_mul", format!("scale shape {:?}", self.shape(s))));
        }
        let sv = self.item(s);
        let out = self.value(x).iter().map(|&v| v * sv).collect();
        let rg = self.rg(&[x, s]);
        Ok(self.push(self.shape(x), out, Op::ScalarMul { x, s }, rg))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x), out, Op::Scale { x, c }, rg)
    }

    pub fn add_const(&mut self, x: NodeId, c: T) -> NodeId {
        let out = self.value(x).iter().map(|&v| v + c).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x), out, Op::AddConst { x }, rg)
    }

    /// Elementwise division by constant divisors, cycled along the last axis
    /// when `c` is shorter than `x`.
    pub fn div_const(&mut self, x: NodeId, c: &[T]) -> Result<NodeId> {
        let n = numel(self.shape(x));
        if c.is_empty() || n % c.len() != 0 {
            return Err(Error::shape("div_const", format!("{} divisors for {n} values", c.len())));
        }
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v / c[i % c.len()])
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(self.shape(x), out, Op::DivConst { x, c: c.to_vec() }, rg))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: NodeId, lo: T, hi: T) -> NodeId {
        let out = self.value(x).iter().map(|&v| v.max(lo).min(hi)).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x), out, Op::Clamp { x, lo, hi }, rg)
    }

    pub fn pixel_shuffle(&mut self, x: NodeId, r: usize) -> Result<NodeId> {
        let [bs, c, h, w] = self.shape(x);
        if r == 0 || c % (r * r) != 0 {
            return Err(Error::shape("pixel_shuffle", format!("{c} channels not divisible by {r}²")));
        }
        let out = kernels::pixel_shuffle(self.value(x), [bs, c, h, w], r);
        let rg = self.rg(&[x]);
        Ok(self.push([bs, c / (r * r), h * r, w * r], out, Op::PixelShuffle { x, r }, rg))
    }

    pub fn pixel_unshuffle(&mut self, x: NodeId, r: usize) -> Result<NodeId> {
        let [bs, c, h, w] = self.shape(x);
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(Error::shape("pixel_unshuffle", format!("{h}x{w} not divisible by {r}")));
        }
        let out = kernels::pixel_unshuffle(self.value(x), [bs, c, h, w], r);
        let rg = self.rg(&[x]);
        Ok(self.push([bs, c * r * r, h / r, w / r], out, Op::PixelUnshuffle { x, r }, rg))
    }

    /// Affine map of a `(rows, in)` matrix by `w: (out, in)` and `b: (out)`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let [rows, inp, ..] = self.shape(x);
        let [out, win, ..] = self.shape(w);
        if numel(self.shape(x)) != rows * inp || numel(self.shape(w)) != out * win {
            return Err(Error::shape("linear", "operands must be matrices"));
        }
        if inp != win {
            return Err(Error::shape("linear", format!("input width {inp}, weight expects {win}")));
        }
        if numel(self.shape(b)) != out {
            return Err(Error::shape("linear", format!("bias length {} for {out} outputs", numel(self.shape(b)))));
        }
        let y = kernels::linear_forward(self.value(x), self.value(w), self.value(b), rows, inp, out);
        let rg = self.rg(&[x, w, b]);
        Ok(self.push([rows, out, 1, 1], y, Op::Linear { x, w, b }, rg))
    }

    /// Mean absolute error.
    pub fn mae(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        same_shape("mae", self.shape(pred), self.shape(target))?;
        let n = T::of_usize(self.value(pred).len());
        let s: T = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .map(|(&p, &t)| (p - t).abs())
            .sum();
        let rg = self.rg(&[pred, target]);
        Ok(self.push([1, 1, 1, 1], vec![s / n], Op::Mae { pred, target }, rg))
    }

    /// Mean squared error.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        same_shape("mse", self.shape(pred), self.shape(target))?;
        let n = T::of_usize(self.value(pred).len());
        let s: T = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let rg = self.rg(&[pred, target]);
        Ok(self.push([1, 1, 1, 1], vec![s / n], Op::Mse { pred, target }, rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: T = self.value(x).iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push([1, 1, 1, 1], vec![s], Op::Sum { x }, rg)
    }

    /// Concatenates the flattened parts into a single `(1, n)` row.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let value: Vec<T> = parts.iter().flat_map(|p| self.value(*p).iter().copied()).collect();
        let n = value.len();
        let rg = self.rg(parts);
        self.push([1, n, 1, 1], value, Op::Concat { parts: parts.to_vec() }, rg)
    }

    /// Threshold binarization `1[x > thres]` with a straight-through backward:
    /// the upstream gradient is copied onto `x` unchanged.
    pub fn binarize(&mut self, x: NodeId, thres: T) -> NodeId {
        let out = self
            .value(x)
            .iter()
            .map(|&v| if v > thres { T::one() } else { T::zero() })
            .collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x), out, Op::Binarize { x }, rg)
    }

    /// Path indicators `(β_s, β_b)` from the scalar nodes `(α_s, α_b)`.
    /// `α_s ≤ α_b` selects the block path. Each indicator passes its gradient
    /// straight through to its own α.
    pub fn select_path(&mut self, alpha_s: NodeId, alpha_b: NodeId) -> Result<(NodeId, NodeId)> {
        if numel(self.shape(alpha_s)) != 1 || numel(self.shape(alpha_b)) != 1 {
            return Err(Error::shape("select_path", "alphas must be scalars"));
        }
        let (bs, bb) = select_path(self.item(alpha_s), self.item(alpha_b));
        let rs = self.rg(&[alpha_s]);
        let rb = self.rg(&[alpha_b]);
        let s = self.push([1, 1, 1, 1], vec![bs], Op::PathIndicator { alpha: alpha_s }, rs);
        let b = self.push([1, 1, 1, 1], vec![bb], Op::PathIndicator { alpha: alpha_b }, rb);
        Ok((s, b))
    }

    /// `out = base`, then `out[:, idx[j]] += src[:, j]`.
    pub fn scatter_add_channels(&mut self, base: NodeId, src: NodeId, idx: &[usize]) -> Result<NodeId> {
        let [bs, c, h, w] = self.shape(base);
        let [sb, sc, sh, sw] = self.shape(src);
        if sb != bs || sh != h || sw != w || sc != idx.len() || idx.iter().any(|&i| i >= c) {
            return Err(Error::shape(
                "scatter_add_channels",
                format!("base {:?}, src {:?}, {} indices", self.shape(base), self.shape(src), idx.len()),
            ));
        }
        let plane = h * w;
        let mut out = self.value(base).to_vec();
        let s = self.value(src);
        for b in 0..bs {
            for (j, &ci) in idx.iter().enumerate() {
                let d = &mut out[(b * c + ci) * plane..(b * c + ci + 1) * plane];
                let sp = &s[(b * sc + j) * plane..(b * sc + j + 1) * plane];
                d.iter_mut().zip(sp).for_each(|(d, &v)| *d += v);
            }
        }
        let rg = self.rg(&[base, src]);
        Ok(self.push(
            [bs, c, h, w],
            out,
            Op::ScatterAddChannels {
                base,
                src,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`. Gradients are added to whatever
    /// earlier passes left behind; call [`Graph::zero_grad`] to reset.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let shape = self.shape(loss);
        if numel(shape) != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut local: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = local[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut local);
            match &mut self.grads[idx] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                None => self.grads[idx] = Some(g),
            }
        }
        Ok(())
    }

    fn send(&self, local: &mut [Option<Vec<T>>], to: NodeId, g: Vec<T>) {
        if !self.nodes[to.0].requires_grad {
            return;
        }
        match &mut local[to.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &[T], local: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, dims } => {
                if self.requires_grad(*x) {
                    let gx = kernels::conv2d_backward_input(g, self.value(*w), dims);
                    self.send(local, *x, gx);
                }
                if self.requires_grad(*w) {
                    let gw = kernels::conv2d_backward_weight(g, self.value(*x), dims);
                    self.send(local, *w, gw);
                }
                if self.requires_grad(*b) {
                    let gb = kernels::channel_sums(g, dims.batch, dims.out_ch, dims.height * dims.width);
                    self.send(local, *b, gb);
                }
            }
            Op::ChannelScale { x, s } => {
                let [bs, c, h, w] = node.shape;
                let plane = h * w;
                let sv = self.value(*s);
                if self.requires_grad(*x) {
                    let mut gx = g.to_vec();
                    for bi in 0..bs {
                        for ci in 0..c {
                            gx[(bi * c + ci) * plane..(bi * c + ci + 1) * plane]
                                .iter_mut()
                                .for_each(|v| *v = *v * sv[ci]);
                        }
                    }
                    self.send(local, *x, gx);
                }
                if self.requires_grad(*s) {
                    let xv = self.value(*x);
                    let mut gs = vec![T::zero(); c];
                    for bi in 0..bs {
                        for (ci, acc) in gs.iter_mut().enumerate() {
                            let r = (bi * c + ci) * plane..(bi * c + ci + 1) * plane;
                            *acc += xv[r.clone()].iter().zip(&g[r]).fold(T::zero(), |a, (&p, &q)| a + p * q);
                        }
                    }
                    self.send(local, *s, gs);
                }
            }
            Op::Relu { x } => {
                let gx = self
                    .value(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                self.send(local, *x, gx);
            }
            Op::Add { a, b } => {
                self.send(local, *a, g.to_vec());
                self.send(local, *b, g.to_vec());
            }
            Op::ScalarMul { x, s } => {
                let sv = self.item(*s);
                if self.requires_grad(*x) {
                    self.send(local, *x, g.iter().map(|&v| v * sv).collect());
                }
                if self.requires_grad(*s) {
                    let gs = self.value(*x).iter().zip(g).fold(T::zero(), |a, (&p, &q)| a + p * q);
                    self.send(local, *s, vec![gs]);
                }
            }
            Op::Scale { x, c } => self.send(local, *x, g.iter().map(|&v| v * *c).collect()),
            Op::AddConst { x } => self.send(local, *x, g.to_vec()),
            Op::DivConst { x, c } => {
                let gx = g.iter().enumerate().map(|(i, &v)| v / c[i % c.len()]).collect();
                self.send(local, *x, gx);
            }
            Op::Clamp { x, lo, hi } => {
                let gx = self
                    .value(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v < *lo || v > *hi { T::zero() } else { gv })
                    .collect();
                self.send(local, *x, gx);
            }
            Op::PixelShuffle { x, r } => {
                self.send(local, *x, kernels::pixel_unshuffle(g, node.shape, *r));
            }
            Op::PixelUnshuffle { x, r } => {
                self.send(local, *x, kernels::pixel_shuffle(g, node.shape, *r));
            }
            Op::Linear { x, w, b } => {
                let [rows, inp, ..] = self.shape(*x);
                let out = node.shape[1];
                let (gx, gw, gb) = kernels::linear_backward(g, self.value(*x), self.value(*w), rows, inp, out);
                self.send(local, *x, gx);
                self.send(local, *w, gw);
                self.send(local, *b, gb);
            }
            Op::Mae { pred, target } => {
                let n = T::of_usize(self.value(*pred).len());
                let scale = g[0] / n;
                let sign: Vec<T> = self
                    .value(*pred)
                    .iter()
                    .zip(self.value(*target))
                    .map(|(&p, &t)| {
                        if p > t {
                            scale
                        } else if p < t {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if self.requires_grad(*target) {
                    self.send(local, *target, sign.iter().map(|&v| -v).collect());
                }
                self.send(local, *pred, sign);
            }
            Op::Mse { pred, target } => {
                let n = T::of_usize(self.value(*pred).len());
                let scale = T::of(2.0) * g[0] / n;
                let d: Vec<T> = self
                    .value(*pred)
                    .iter()
                    .zip(self.value(*target))
                    .map(|(&p, &t)| scale * (p - t))
                    .collect();
                if self.requires_grad(*target) {
                    self.send(local, *target, d.iter().map(|&v| -v).collect());
                }
                self.send(local, *pred, d);
            }
            Op::Sum { x } => {
                let n = self.value(*x).len();
                self.send(local, *x, vec![g[0]; n]);
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    self.send(local, *p, g[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::Binarize { x } => self.send(local, *x, g.to_vec()),
            Op::PathIndicator { alpha } => self.send(local, *alpha, g.to_vec()),
            Op::ScatterAddChannels { base, src, idx } => {
                let [bs, c, h, w] = node.shape;
                let plane = h * w;
                if self.requires_grad(*src) {
                    let sc = idx.len();
                    let mut gs = vec![T::zero(); bs * sc * plane];
                    for b in 0..bs {
                        for (j, &ci) in idx.iter().enumerate() {
                            gs[(b * sc + j) * plane..(b * sc + j + 1) * plane]
                                .copy_from_slice(&g[(b * c + ci) * plane..(b * c + ci + 1) * plane]);
                        }
                    }
                    self.send(local, *src, gs);
                }
                self.send(local, *base, g.to_vec());
            }
        }
    }
}

/// `(β_s, β_b)`: `(0, 1)` when `α_s ≤ α_b`, else `(1, 0)`.
pub fn select_path<T: Scalar>(alpha_s: T, alpha_b: T) -> (T, T) {
    if alpha_s <= alpha_b {
        (T::zero(), T::one())
    } else {
        (T::one(), T::zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_1x1_conv_is_exact() {
        let mut g = Graph::new();
        let xs: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = g.leaf(&t([1, 2, 3, 3], &xs));
        let w = g.leaf(&t([2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.leaf(&Tensor4::zeros([2, 1, 1, 1]));
        let y = g.conv2d(x, w, b).unwrap();
        assert_eq!(g.value(y), &xs[..]);
    }

    #[test]
    fn conv_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor4::zeros([1, 2, 3, 3]));
        let w = g.leaf(&Tensor4::zeros([1, 3, 3, 3]));
        let w2 = g.leaf(&Tensor4::zeros([1, 2, 2, 2]));
        let b = g.leaf(&Tensor4::zeros([1, 1, 1, 1]));
        assert!(matches!(g.conv2d(x, w, b), Err(Error::Shape { .. })));
        assert!(matches!(g.conv2d(x, w2, b), Err(Error::UnsupportedKernel(2))));
    }

    #[test]
    fn relu_and_add_basics() {
        let mut g = Graph::new();
        let x = g.leaf(&t([3, 1, 1, 1], &[-1.0, 0.0, 2.0]).trainable());
        let r = g.relu(x);
        assert_eq!(g.value(r), &[0.0, 0.0, 2.0]);
        let z = g.constant(&Tensor4::zeros([3, 1, 1, 1]));
        let s = g.add(x, z).unwrap();
        assert_eq!(g.value(s), g.value(x));
        let l = g.sum(r);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
        let bad = g.constant(&Tensor4::zeros([2, 1, 1, 1]));
        assert!(g.add(x, bad).is_err());
    }

    #[test]
    fn channel_scale_zeroes_a_channel() {
        let mut g = Graph::new();
        let x = g.leaf(&t([1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let s = g.leaf(&t([2, 1, 1, 1], &[1.0, 0.0]));
        let y = g.channel_scale(x, s).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0, 0.0, 0.0]);
        let s3 = g.leaf(&t([3, 1, 1, 1], &[1.0, 1.0, 1.0]));
        assert!(g.channel_scale(x, s3).is_err());
    }

    #[test]
    fn pixel_shuffle_maps_channels_to_quad() {
        let mut g = Graph::new();
        let x = g.leaf(&t([1, 4, 1, 1], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.pixel_shuffle(x, 2).unwrap();
        assert_eq!(g.shape(y), [1, 1, 2, 2]);
        assert_eq!(g.value(y), &[1.0, 2.0, 3.0, 4.0]);
        let x3 = g.leaf(&Tensor4::zeros([1, 3, 1, 1]));
        assert!(g.pixel_shuffle(x3, 2).is_err());
        let id = g.pixel_shuffle(x, 1).unwrap();
        assert_eq!(g.value(id), g.value(x));
    }

    #[test]
    fn linear_scalar_case() {
        let mut g = Graph::new();
        let x = g.leaf(&t([1, 1, 1, 1], &[3.0]));
        let w = g.leaf(&t([1, 1, 1, 1], &[2.0]));
        let b = g.leaf(&t([1, 1, 1, 1], &[1.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.item(y), 7.0);
        let w2 = g.leaf(&Tensor4::zeros([1, 2, 1, 1]));
        assert!(g.linear(x, w2, b).is_err());
    }

    #[test]
    fn mae_values_and_gradient() {
        let mut g = Graph::new();
        let p = g.leaf(&t([1, 1, 2, 2], &[3.0, 3.0, 3.0, 3.0]).trainable());
        let q = g.constant(&t([1, 1, 2, 2], &[1.0, 1.0, 1.0, 1.0]));
        let l = g.mae(p, q).unwrap();
        assert_eq!(g.item(l), 2.0);
        let same = g.mae(q, q).unwrap();
        assert_eq!(g.item(same), 0.0);

        let mut g = Graph::new();
        let x = g.leaf(&t([1, 1, 1, 4], &[0.5, 0.0, 0.0, 0.0]).trainable());
        let z = g.constant(&Tensor4::zeros([1, 1, 1, 4]));
        let l = g.mae(x, z).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let mut g = Graph::new();
        let x = g.leaf(&t([2, 1, 1, 1], &[1.0, -4.0]).trainable());
        let l = g.sum(x);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
        g.zero_grad();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn path_selection_table() {
        assert_eq!(select_path(0.2, 0.8), (0.0, 1.0));
        assert_eq!(select_path(0.5, 0.5), (0.0, 1.0));
        assert_eq!(select_path(1.0, 0.0), (1.0, 0.0));
    }

    #[test]
    fn binarize_is_strict_and_straight_through() {
        let mut g = Graph::new();
        let m = g.leaf(&t([3, 1, 1, 1], &[0.7, 0.5, 0.3]).trainable());
        let b = g.binarize(m, 0.5);
        assert_eq!(g.value(b), &[1.0, 0.0, 0.0]);
        let w = g.constant(&t([1, 3, 1, 1], &[2.0, -3.0, 5.0]));
        let p = g.channel_scale(w, b).unwrap();
        let l = g.sum(p);
        g.backward(l).unwrap();
        assert_eq!(g.grad(m).unwrap(), &[2.0, -3.0, 5.0]);
    }

    #[test]
    fn scatter_add_routes_channels() {
        let mut g = Graph::new();
        let base = g.leaf(&Tensor4::zeros([1, 3, 1, 1]).trainable());
        let src = g.leaf(&t([1, 2, 1, 1], &[5.0, 7.0]).trainable());
        let y = g.scatter_add_channels(base, src, &[2, 0]).unwrap();
        assert_eq!(g.value(y), &[7.0, 0.0, 5.0]);
        let w = g.constant(&t([1, 3, 1, 1], &[1.0, 2.0, 3.0]));
        let p = g.channel_scale(y, w).unwrap();
        let l = g.sum(p);
        g.backward(l).unwrap();
        assert_eq!(g.grad(src).unwrap(), &[3.0, 1.0]);
        assert_eq!(g.grad(base).unwrap(), &[1.0, 2.0, 3.0]);
        assert!(g.scatter_add_channels(base, src, &[0, 3]).is_err());
    }
}
