use std::path::Path;

use serde::Serialize;

use super::model::{bicubic_skip, join, SupernetModel};
use crate::container::Container;
use crate::diffcore::{ConvWeight, Graph, NodeId, Tensor4};
use crate::error::{Error, Result};
use crate::latlab::{BLOCK_CONVS, WIDTH_ARITY};
use crate::scalar::Scalar;
use crate::speedmodel::SpeedMLP;

const COMPACT_MAGIC: &[u8; 8] = b"SRNASCMP";
pub const COMPACT_VERSION: u32 = 1;

/// A kept block with its pruned convs. Conv-3 writes only the surviving
/// channels, which are added back onto trunk channels `out_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactBlock<T> {
    pub convs: [ConvWeight<T>; BLOCK_CONVS],
    pub out_index: Vec<usize>,
    /// Supernet block this came from.
    pub source: usize,
    /// Effective widths `(trunk, Σb₁, Σb₂, Σb₃)` at extraction time.
    pub widths: [usize; WIDTH_ARITY],
}

/// The searched network with skipped blocks and masked channels removed.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactModel<T> {
    pub scale: usize,
    pub trunk_width: usize,
    pub v0: f64,
    /// Block count of the supernet this was extracted from.
    pub source_blocks: usize,
    pub head: ConvWeight<T>,
    pub blocks: Vec<CompactBlock<T>>,
    pub tail: ConvWeight<T>,
    pub skip: ConvWeight<T>,
}

#[derive(Clone, Debug)]
pub struct CompactIds {
    order: Vec<NodeId>,
}

impl CompactIds {
    pub fn order(&self) -> &[NodeId] {
        &self.order
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockSummary {
    pub index: usize,
    pub kept: bool,
    pub widths: [usize; WIDTH_ARITY],
    pub predicted_ms: Option<f64>,
}

/// Human-readable description of an extracted architecture.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArchitectureSummary {
    pub scale: usize,
    pub trunk_width: usize,
    pub blocks: Vec<BlockSummary>,
    pub kept_blocks: usize,
    pub skipped_blocks: Vec<usize>,
    pub predicted_v_n: f64,
    pub parameters: usize,
}

impl ArchitectureSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Rows `outs` and columns `ins` of a conv. An empty `outs` yields a single
/// all-zero channel, whose output is exactly zero like the masked original.
fn slice_conv<T: Scalar>(conv: &ConvWeight<T>, outs: &[usize], ins: &[usize]) -> Result<ConvWeight<T>> {
    let [_, i_all, k, _] = conv.weight.shape();
    let kk = k * k;
    let w = conv.weight.data();
    let (n_out, n_in) = (outs.len().max(1), ins.len());
    let mut data = vec![T::zero(); n_out * n_in * kk];
    let mut bias = vec![T::zero(); n_out];
    for (oi, &o) in outs.iter().enumerate() {
        bias[oi] = conv.bias.data()[o];
        for (ii, &i) in ins.iter().enumerate() {
            let src = (o * i_all + i) * kk;
            let dst = (oi * n_in + ii) * kk;
            data[dst..dst + kk].copy_from_slice(&w[src..src + kk]);
        }
    }
    ConvWeight::new(
        Tensor4::from_vec([n_out, n_in, k, k], data)?.trainable(),
        Tensor4::from_vec([n_out, 1, 1, 1], bias)?.trainable(),
    )
}

fn active_indices<T: Scalar>(bin: &[T]) -> Vec<usize> {
    bin.iter()
        .enumerate()
        .filter(|(_, &b)| b == T::one())
        .map(|(i, _)| i)
        .collect()
}

/// Materializes the searched network. Blocks on the skip path are dropped;
/// inside kept blocks only channels whose binary mask is 1 survive. A conv
/// left with no survivors keeps one zeroed channel so shapes stay valid.
/// A kept block whose conv-3 has no survivors adds nothing to the trunk
/// and is converted to a skip.
pub fn extract_architecture<T: Scalar>(model: &SupernetModel<T>) -> Result<CompactModel<T>> {
    let trunk = model.trunk_width();
    let mut blocks = Vec::new();
    for (n, blk) in model.blocks.iter().enumerate() {
        if !blk.uses_block() {
            continue;
        }
        let keep: [Vec<usize>; BLOCK_CONVS] = std::array::from_fn(|l| active_indices(&blk.block.convs[l].mask.binary()));
        if keep[BLOCK_CONVS - 1].is_empty() {
            log::info!("block {n}: no surviving output channels, converted to a skip");
            continue;
        }
        let all_trunk: Vec<usize> = (0..trunk).collect();
        let in_idx = |l: usize| -> Vec<usize> {
            match l {
                0 => all_trunk.clone(),
                _ if keep[l - 1].is_empty() => vec![0],
                _ => keep[l - 1].clone(),
            }
        };
        let convs = [
            slice_conv(&blk.block.convs[0].conv, &keep[0], &in_idx(0))?,
            slice_conv(&blk.block.convs[1].conv, &keep[1], &in_idx(1))?,
            slice_conv(&blk.block.convs[2].conv, &keep[2], &in_idx(2))?,
        ];
        blocks.push(CompactBlock {
            convs,
            out_index: keep[BLOCK_CONVS - 1].clone(),
            source: n,
            widths: blk.block.effective_widths(),
        });
    }
    let mut out = CompactModel {
        scale: model.scale(),
        trunk_width: trunk,
        v0: model.config.v0,
        source_blocks: model.blocks.len(),
        head: model.head.clone(),
        blocks,
        tail: model.tail.clone(),
        skip: model.skip.clone(),
    };
    out.zero_grad();
    Ok(out)
}

impl<T: Scalar> CompactModel<T> {
    pub fn register(&self, g: &mut Graph<T>) -> CompactIds {
        let mut order = Vec::new();
        let mut reg = |c: &ConvWeight<T>| {
            let (w, b) = c.register(g);
            order.extend([w, b]);
        };
        reg(&self.head);
        for b in &self.blocks {
            b.convs.iter().for_each(&mut reg);
        }
        reg(&self.tail);
        reg(&self.skip);
        CompactIds { order }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        let mut out: Vec<&mut Tensor4<T>> = vec![&mut self.head.weight, &mut self.head.bias];
        for b in &mut self.blocks {
            for c in &mut b.convs {
                out.push(&mut c.weight);
                out.push(&mut c.bias);
            }
        }
        out.extend([
            &mut self.tail.weight,
            &mut self.tail.bias,
            &mut self.skip.weight,
            &mut self.skip.bias,
        ]);
        out
    }

    pub fn collect_grads(&mut self, g: &Graph<T>, ids: &CompactIds) {
        for (p, &id) in self.params_mut().into_iter().zip(ids.order()) {
            if let Some(gr) = g.grad(id) {
                p.accumulate_grad(gr);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    pub fn parameter_count(&self) -> usize {
        let mut m = self.clone();
        m.params_mut().iter().map(|p| p.len()).sum()
    }

    pub fn forward(&self, g: &mut Graph<T>, ids: &CompactIds, lr: NodeId) -> Result<NodeId> {
        if g.shape(lr)[1] != 3 {
            return Err(Error::shape("compact_forward", format!("input must have 3 channels, got {:?}", g.shape(lr))));
        }
        let o = ids.order();
        let mut a = g.conv2d(lr, o[0], o[1])?;
        let mut p = 2;
        for b in &self.blocks {
            let y = g.conv2d(a, o[p], o[p + 1])?;
            let y = g.relu(y);
            let y = g.conv2d(y, o[p + 2], o[p + 3])?;
            let y = g.conv2d(y, o[p + 4], o[p + 5])?;
            a = g.scatter_add_channels(a, y, &b.out_index)?;
            p += 2 * BLOCK_CONVS;
        }
        let t = g.conv2d(a, o[p], o[p + 1])?;
        let t = g.pixel_shuffle(t, self.scale)?;
        let s = g.conv2d(lr, o[p + 2], o[p + 3])?;
        let s = g.pixel_shuffle(s, self.scale)?;
        g.add(t, s)
    }

    /// Gradient-free forward.
    pub fn infer(&self, lr: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut frozen = self.clone();
        frozen.params_mut().into_iter().for_each(|p| p.requires_grad = false);
        let mut g = Graph::new();
        let x = g.constant(lr);
        let ids = frozen.register(&mut g);
        let y = frozen.forward(&mut g, &ids, x)?;
        Ok(g.tensor(y))
    }

    /// `v_0 + Σ predict(widths)` over the kept blocks.
    pub fn predicted_latency(&self, speed: &SpeedMLP<T>) -> Result<f64> {
        let mut v = self.v0;
        for b in &self.blocks {
            v += speed.predict(&b.widths.map(T::of_usize))?.ms.to_f64_lossy();
        }
        Ok(v)
    }

    /// Per-block description, including the blocks that were dropped.
    pub fn summary(&self, speed: Option<&SpeedMLP<T>>) -> Result<ArchitectureSummary> {
        let mut blocks = Vec::with_capacity(self.source_blocks);
        let mut kept = self.blocks.iter().peekable();
        for index in 0..self.source_blocks {
            match kept.peek() {
                Some(b) if b.source == index => {
                    let predicted_ms = match speed {
                        Some(s) => Some(s.predict(&b.widths.map(T::of_usize))?.ms.to_f64_lossy()),
                        None => None,
                    };
                    blocks.push(BlockSummary {
                        index,
                        kept: true,
                        widths: b.widths,
                        predicted_ms,
                    });
                    kept.next();
                }
                _ => blocks.push(BlockSummary {
                    index,
                    kept: false,
                    widths: [self.trunk_width, 0, 0, 0],
                    predicted_ms: None,
                }),
            }
        }
        let predicted_v_n = match speed {
            Some(s) => self.predicted_latency(s)?,
            None => f64::NAN,
        };
        Ok(ArchitectureSummary {
            scale: self.scale,
            trunk_width: self.trunk_width,
            skipped_blocks: blocks.iter().filter(|b| !b.kept).map(|b| b.index).collect(),
            kept_blocks: self.blocks.len(),
            blocks,
            predicted_v_n,
            parameters: self.parameter_count(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> CompactModel<U> {
        CompactModel {
            scale: self.scale,
            trunk_width: self.trunk_width,
            v0: self.v0,
            source_blocks: self.source_blocks,
            head: self.head.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| CompactBlock {
                    convs: std::array::from_fn(|l| b.convs[l].cast()),
                    out_index: b.out_index.clone(),
                    source: b.source,
                    widths: b.widths,
                })
                .collect(),
            tail: self.tail.cast(),
            skip: self.skip.cast(),
        }
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.set("kind", "compact");
        c.set("scale", self.scale);
        c.set("trunk_width", self.trunk_width);
        c.set("v0", self.v0);
        c.set("n_blocks", self.blocks.len());
        c.set("source_blocks", self.source_blocks);
        c.push("head.weight", &self.head.weight);
        c.push("head.bias", &self.head.bias);
        for (i, b) in self.blocks.iter().enumerate() {
            c.set(&format!("block{i}.out_index"), join(&b.out_index));
            c.set(&format!("block{i}.source"), b.source);
            c.set(&format!("block{i}.widths"), join(&b.widths));
            for (l, conv) in b.convs.iter().enumerate() {
                c.push(format!("block{i}.conv{}.weight", l + 1), &conv.weight);
                c.push(format!("block{i}.conv{}.bias", l + 1), &conv.bias);
            }
        }
        c.push("tail.weight", &self.tail.weight);
        c.push("tail.bias", &self.tail.bias);
        c.push("skip.weight", &self.skip.weight);
        c.push("skip.bias", &self.skip.bias);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.get("kind")? != "compact" {
            return Err(Error::InvalidArgument(format!("expected a compact model, found `{}`", c.get("kind")?)));
        }
        let scale: usize = c.get_parsed("scale")?;
        let trunk_width: usize = c.get_parsed("trunk_width")?;
        let n: usize = c.get_parsed("n_blocks")?;
        let mut rd = c.reader();
        let mut conv = |name: &str| -> Result<ConvWeight<T>> {
            let w = rd.next::<T>(&format!("{name}.weight"))?.trainable();
            let b = rd.next::<T>(&format!("{name}.bias"))?.trainable();
            ConvWeight::new(w, b)
        };
        let head = conv("head")?;
        let mut blocks = Vec::with_capacity(n);
        for i in 0..n {
            let out_index = parse_list(c.get(&format!("block{i}.out_index"))?)?;
            let widths: [usize; WIDTH_ARITY] = parse_list(c.get(&format!("block{i}.widths"))?)?
                .try_into()
                .map_err(|_| Error::InvalidArgument(format!("block{i}.widths needs {WIDTH_ARITY} values")))?;
            let convs = [
                conv(&format!("block{i}.conv1"))?,
                conv(&format!("block{i}.conv2"))?,
                conv(&format!("block{i}.conv3"))?,
            ];
            if convs[2].out_channels() != out_index.len() || out_index.iter().any(|&j| j >= trunk_width) {
                return Err(Error::shape("compact model", format!("block{i}: bad residual indices")));
            }
            blocks.push(CompactBlock {
                convs,
                out_index,
                source: c.get_parsed(&format!("block{i}.source"))?,
                widths,
            });
        }
        let tail = conv("tail")?;
        let skip = conv("skip")?;
        rd.finish()?;
        let source_blocks: usize = c.get_parsed("source_blocks")?;
        if blocks.windows(2).any(|w| w[0].source >= w[1].source) || blocks.last().is_some_and(|b| b.source >= source_blocks) {
            return Err(Error::InvalidArgument("compact model: block sources out of order".into()));
        }
        if head.out_channels() != trunk_width || tail.out_channels() != 3 * scale * scale {
            return Err(Error::shape("compact model", "head/tail widths disagree with metadata"));
        }
        Ok(Self {
            scale,
            trunk_width,
            v0: c.get_parsed("v0")?,
            source_blocks,
            head,
            blocks,
            tail,
            skip,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path, COMPACT_MAGIC, COMPACT_VERSION)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, COMPACT_MAGIC, COMPACT_VERSION, "compact model")?)
    }

    /// Network with no blocks whose skip conv does plain bicubic upscaling
    /// and whose tail is zero: its output is the bicubic image.
    pub fn bicubic_baseline(scale: usize, trunk_width: usize) -> Result<Self> {
        let zeros = |o: usize, i: usize, k: usize| {
            ConvWeight::new(Tensor4::zeros([o, i, k, k]), Tensor4::zeros([o, 1, 1, 1]))
        };
        Ok(Self {
            scale,
            trunk_width,
            v0: 0.0,
            source_blocks: 0,
            head: zeros(trunk_width, 3, 3)?,
            blocks: Vec::new(),
            tail: zeros(3 * scale * scale, trunk_width, 3)?,
            skip: bicubic_skip(scale)?,
        })
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.parse().map_err(|_| Error::InvalidArgument(format!("bad index list `{s}`"))))
        .collect()
}

