use rand::Rng;

use crate::diffcore::{ConvWeight, Graph, NodeId, Tensor4};
use crate::error::{Error, Result};
use crate::latlab::{BLOCK_CONVS, WIDTH_ARITY};
use crate::scalar::Scalar;
use crate::speedmodel::{SpeedIds, SpeedMLP};

/// `b[c] = 1` iff `m[c] > thres`.
pub fn binarize_mask<T: Scalar>(m: &[T], thres: T) -> Vec<T> {
    m.iter().map(|&v| if v > thres { T::one() } else { T::zero() }).collect()
}

/// Trainable real-valued channel mask and its binarization threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskLayer<T> {
    pub m: Tensor4<T>,
    pub thres: T,
}

impl<T: Scalar> MaskLayer<T> {
    /// Entries drawn uniformly from `(0, 1)`.
    pub fn random<R: Rng + ?Sized>(channels: usize, thres: T, rng: &mut R) -> Self {
        Self {
            m: Tensor4::uniform([channels, 1, 1, 1], f64::EPSILON, 1.0, rng).trainable(),
            thres,
        }
    }

    pub fn binary(&self) -> Vec<T> {
        binarize_mask(self.m.data(), self.thres)
    }

    pub fn active(&self) -> usize {
        self.m.data().iter().filter(|&&v| v > self.thres).count()
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// Conv whose output channels are gated by a mask layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedConv<T> {
    pub conv: ConvWeight<T>,
    pub mask: MaskLayer<T>,
}

/// Block geometry: conv output widths and kernel sizes. The last width must
/// equal the trunk width so the residual add lines up.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockConfig {
    pub trunk_width: usize,
    pub widths: [usize; BLOCK_CONVS],
    pub kernels: [usize; BLOCK_CONVS],
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            trunk_width: 16,
            widths: [64, 48, 16],
            kernels: [1, 1, 3],
        }
    }
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_width == 0 || self.widths.contains(&0) {
            return Err(Error::InvalidArgument("block widths must be >= 1".into()));
        }
        if self.widths[BLOCK_CONVS - 1] != self.trunk_width {
            return Err(Error::InvalidArgument(format!(
                "last conv width {} must equal trunk width {}",
                self.widths[BLOCK_CONVS - 1],
                self.trunk_width
            )));
        }
        if let Some(&k) = self.kernels.iter().find(|&&k| !matches!(k, 1 | 3 | 5)) {
            return Err(Error::UnsupportedKernel(k));
        }
        Ok(())
    }

    /// Caps of the width vector `(f1, f2, f3, f4)` this block can produce.
    pub fn maxima(&self) -> [usize; WIDTH_ARITY] {
        [self.trunk_width, self.widths[0], self.widths[1], self.widths[2]]
    }
}

/// Residual block: conv-1 → mask → ReLU → conv-2 → mask → conv-3 → mask, plus
/// the input.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSRBlock<T> {
    pub convs: [MaskedConv<T>; BLOCK_CONVS],
    pub trunk_width: usize,
}

impl<T: Scalar> MaskedSRBlock<T> {
    pub fn random<R: Rng + ?Sized>(cfg: &BlockConfig, thres: T, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut inp = cfg.trunk_width;
        let mut convs = Vec::with_capacity(BLOCK_CONVS);
        for l in 0..BLOCK_CONVS {
            let gain = if l == BLOCK_CONVS - 1 { 0.1 } else { 1.0 };
            convs.push(MaskedConv {
                conv: ConvWeight::random(cfg.widths[l], inp, cfg.kernels[l], gain, rng)?,
                mask: MaskLayer::random(cfg.widths[l], thres, rng),
            });
            inp = cfg.widths[l];
        }
        Ok(Self {
            convs: convs.try_into().map_err(|_| Error::InvalidArgument("conv count".into()))?,
            trunk_width: cfg.trunk_width,
        })
    }

    /// Width vector `(trunk, Σb₁, Σb₂, Σb₃)` as plain counts.
    pub fn effective_widths(&self) -> [usize; WIDTH_ARITY] {
        [
            self.trunk_width,
            self.convs[0].mask.active(),
            self.convs[1].mask.active(),
            self.convs[2].mask.active(),
        ]
    }
}

/// Masked block plus the path-selection parameters of its aggregation layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveSRBlock<T> {
    pub block: MaskedSRBlock<T>,
    pub alpha_s: Tensor4<T>,
    pub alpha_b: Tensor4<T>,
}

impl<T: Scalar> AdaptiveSRBlock<T> {
    /// Starts on the block path: `α_s = 0`, `α_b = 1`.
    pub fn new(block: MaskedSRBlock<T>) -> Self {
        Self {
            block,
            alpha_s: Tensor4::scalar(T::zero()).trainable(),
            alpha_b: Tensor4::scalar(T::one()).trainable(),
        }
    }

    /// `(β_s, β_b)`.
    pub fn betas(&self) -> (T, T) {
        crate::diffcore::select_path(self.alpha_s.item(), self.alpha_b.item())
    }

    pub fn uses_block(&self) -> bool {
        self.betas().1 == T::one()
    }
}

/// Tape ids of one masked conv.
#[derive(Clone, Copy, Debug)]
pub struct MaskedConvIds {
    pub w: NodeId,
    pub b: NodeId,
    pub m: NodeId,
}

#[derive(Clone, Debug)]
pub struct BlockIds {
    pub convs: [MaskedConvIds; BLOCK_CONVS],
    pub alpha_s: NodeId,
    pub alpha_b: NodeId,
}

impl<T: Scalar> AdaptiveSRBlock<T> {
    pub fn register(&self, g: &mut Graph<T>) -> BlockIds {
        let convs = std::array::from_fn(|l| {
            let c = &self.block.convs[l];
            let (w, b) = c.conv.register(g);
            MaskedConvIds {
                w,
                b,
                m: g.leaf(&c.mask.m),
            }
        });
        BlockIds {
            convs,
            alpha_s: g.leaf(&self.alpha_s),
            alpha_b: g.leaf(&self.alpha_b),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        let mut out = Vec::with_capacity(3 * BLOCK_CONVS + 2);
        for c in &mut self.block.convs {
            out.push(&mut c.conv.weight);
            out.push(&mut c.conv.bias);
            out.push(&mut c.mask.m);
        }
        out.push(&mut self.alpha_s);
        out.push(&mut self.alpha_b);
        out
    }
}

/// Conv output scaled per channel by `gate`, optionally followed by ReLU.
pub fn gated_conv<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    gate: NodeId,
    relu: bool,
) -> Result<NodeId> {
    let y = g.conv2d(x, w, b)?;
    let y = g.channel_scale(y, gate)?;
    Ok(if relu { g.relu(y) } else { y })
}

/// Conv followed by its mask layer: the forward scales by the binarized mask,
/// the backward hands the gradient of the binary mask to `m` unchanged.
/// Returns `(output, binary-mask node)`.
pub fn masked_conv_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    ids: &MaskedConvIds,
    thres: T,
    relu: bool,
) -> Result<(NodeId, NodeId)> {
    let bin = g.binarize(ids.m, thres);
    Ok((gated_conv(g, x, ids.w, ids.b, bin, relu)?, bin))
}

/// `(trunk, Σb₁, Σb₂, Σb₃)` as a `(1, 4)` tape row; each sum carries the
/// straight-through gradient back to every mask entry.
pub fn effective_widths_node<T: Scalar>(g: &mut Graph<T>, trunk: usize, binaries: &[NodeId; BLOCK_CONVS]) -> NodeId {
    let mut parts = vec![g.scalar_constant(T::of_usize(trunk))];
    parts.extend(binaries.iter().map(|&b| g.sum(b)));
    g.concat(&parts)
}

/// Overrides for the binarized quantities, used to check the
/// straight-through contract against a graph where they are free leaves.
#[derive(Clone, Debug)]
pub struct FreeGates<T> {
    pub binaries: [Tensor4<T>; BLOCK_CONVS],
    pub betas: (T, T),
}

/// Nodes produced by one adaptive block.
#[derive(Clone, Debug)]
pub struct BlockTrace {
    pub binaries: [NodeId; BLOCK_CONVS],
    pub beta_s: NodeId,
    pub beta_b: NodeId,
    pub widths: NodeId,
    pub v_c: NodeId,
    pub out: NodeId,
    pub v: NodeId,
}

/// Aggregation layer: `a_n = β_s·a_prev + β_b·block(a_prev)` and
/// `v_n = v_prev + β_b·v_c`, with `v_c` the predicted latency of the block's
/// effective widths. The block body is always evaluated so `α_b` keeps a
/// gradient while the skip path is selected.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_block_forward<T: Scalar>(
    g: &mut Graph<T>,
    a_prev: NodeId,
    v_prev: NodeId,
    blk: &AdaptiveSRBlock<T>,
    ids: &BlockIds,
    speed: &SpeedMLP<T>,
    speed_ids: &SpeedIds,
    free: Option<&FreeGates<T>>,
) -> Result<BlockTrace> {
    let trunk = blk.block.trunk_width;
    if g.shape(a_prev)[1] != trunk {
        return Err(Error::shape(
            "adaptive_block_forward",
            format!("features have {} channels, block trunk is {trunk}", g.shape(a_prev)[1]),
        ));
    }
    if speed.arity() != WIDTH_ARITY {
        return Err(Error::shape(
            "adaptive_block_forward",
            format!("speed model takes {} inputs, block provides {WIDTH_ARITY}", speed.arity()),
        ));
    }
    let mut x = a_prev;
    let mut binaries = [a_prev; BLOCK_CONVS];
    for l in 0..BLOCK_CONVS {
        let c = &ids.convs[l];
        let relu = l == 0;
        match free {
            None => {
                let (y, b) = masked_conv_forward(g, x, c, blk.block.convs[l].mask.thres, relu)?;
                x = y;
                binaries[l] = b;
            }
            Some(fg) => {
                let b = g.leaf(&fg.binaries[l].clone().trainable());
                x = gated_conv(g, x, c.w, c.b, b, relu)?;
                binaries[l] = b;
            }
        }
    }
    let block_out = g.add(a_prev, x)?;
    let (beta_s, beta_b) = match free {
        None => g.select_path(ids.alpha_s, ids.alpha_b)?,
        Some(fg) => (
            g.leaf(&Tensor4::scalar(fg.betas.0).trainable()),
            g.leaf(&Tensor4::scalar(fg.betas.1).trainable()),
        ),
    };
    let skip = g.scalar_mul(a_prev, beta_s)?;
    let body = g.scalar_mul(block_out, beta_b)?;
    let out = g.add(skip, body)?;

    let widths = effective_widths_node(g, trunk, &binaries);
    let v_c = speed.forward_node(g, speed_ids, widths)?;
    let dv = g.scalar_mul(v_c, beta_b)?;
    let v = g.add(v_prev, dv)?;
    Ok(BlockTrace {
        binaries,
        beta_s,
        beta_b,
        widths,
        v_c,
        out,
        v,
    })
}
