use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::block::{adaptive_block_forward, AdaptiveSRBlock, BlockConfig, BlockIds, BlockTrace, FreeGates, MaskedSRBlock};
use crate::container::Container;
use crate::dataeval::catmull_rom;
use crate::diffcore::{ConvWeight, Graph, NodeId, Tensor4};
use crate::error::{Error, Result};
use crate::latlab::{BLOCK_CONVS, WIDTH_ARITY};
use crate::scalar::Scalar;
use crate::speedmodel::{SpeedIds, SpeedMLP};

pub(crate) const CHECKPOINT_MAGIC: &[u8; 8] = b"SRNASCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How the 5×5 global skip conv starts out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipInit {
    /// Weights reproduce bicubic (Catmull-Rom) upsampling through the pixel
    /// shuffle, so the untrained network already outputs a bicubic image.
    Bicubic,
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupernetConfig {
    pub block: BlockConfig,
    pub n_blocks: usize,
    pub scale: usize,
    pub thres: f64,
    /// Latency accumulated before the first block, in ms.
    pub v0: f64,
    pub skip_init: SkipInit,
    pub seed: u64,
}

impl Default for SupernetConfig {
    fn default() -> Self {
        Self {
            block: BlockConfig::default(),
            n_blocks: 8,
            scale: 2,
            thres: 0.5,
            v0: 0.0,
            skip_init: SkipInit::Bicubic,
            seed: 0,
        }
    }
}

impl SupernetConfig {
    pub fn validate(&self) -> Result<()> {
        self.block.validate()?;
        if !matches!(self.scale, 2 | 4) {
            return Err(Error::InvalidArgument(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        if !self.thres.is_finite() || !self.v0.is_finite() {
            return Err(Error::InvalidArgument("thres and v0 must be finite".into()));
        }
        Ok(())
    }
}

/// Kind of a trainable tensor, for per-group learning rates and freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Mask,
    Alpha,
}

/// Searchable network: head conv, adaptive blocks, tail conv + pixel
/// shuffle, and a global 5×5 skip conv + pixel shuffle.
#[derive(Clone, Debug, PartialEq)]
pub struct SupernetModel<T> {
    pub config: SupernetConfig,
    pub head: ConvWeight<T>,
    pub blocks: Vec<AdaptiveSRBlock<T>>,
    pub tail: ConvWeight<T>,
    pub skip: ConvWeight<T>,
}

#[derive(Clone, Debug)]
pub struct SupernetIds {
    head: (NodeId, NodeId),
    blocks: Vec<BlockIds>,
    tail: (NodeId, NodeId),
    skip: (NodeId, NodeId),
    order: Vec<NodeId>,
}

impl SupernetIds {
    /// Parameter nodes in [`SupernetModel::params_mut`] order.
    pub fn order(&self) -> &[NodeId] {
        &self.order
    }

    pub fn block(&self, i: usize) -> &BlockIds {
        &self.blocks[i]
    }
}

#[derive(Clone, Debug)]
pub struct ModelTrace {
    pub sr: NodeId,
    pub v: NodeId,
    pub blocks: Vec<BlockTrace>,
}

/// Bicubic weights for LR taps `-2..=2` of each sub-pixel phase.
fn bicubic_phase_taps(r: usize) -> Vec<[f64; 5]> {
    (0..r)
        .map(|d| {
            let off = (d as f64 + 0.5) / r as f64 - 0.5;
            std::array::from_fn(|t| catmull_rom(t as f64 - 2.0 - off))
        })
        .collect()
}

pub(crate) fn bicubic_skip<T: Scalar>(r: usize) -> Result<ConvWeight<T>> {
    let taps = bicubic_phase_taps(r);
    let out = 3 * r * r;
    let mut w = vec![T::zero(); out * 3 * 25];
    for c in 0..3 {
        for di in 0..r {
            for dj in 0..r {
                let o = c * r * r + di * r + dj;
                for ky in 0..5 {
                    for kx in 0..5 {
                        w[((o * 3 + c) * 5 + ky) * 5 + kx] = T::of(taps[di][ky] * taps[dj][kx]);
                    }
                }
            }
        }
    }
    ConvWeight::new(
        Tensor4::from_vec([out, 3, 5, 5], w)?.trainable(),
        Tensor4::zeros([out, 1, 1, 1]).trainable(),
    )
}

impl<T: Scalar> SupernetModel<T> {
    pub fn new(config: SupernetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let trunk = config.block.trunk_width;
        let r2 = config.scale * config.scale;
        let thres = T::of(config.thres);
        let head = ConvWeight::random(trunk, 3, 3, 1.0, &mut rng)?;
        let blocks = (0..config.n_blocks)
            .map(|_| Ok(AdaptiveSRBlock::new(MaskedSRBlock::random(&config.block, thres, &mut rng)?)))
            .collect::<Result<Vec<_>>>()?;
        let tail = ConvWeight::random(3 * r2, trunk, 3, 0.1, &mut rng)?;
        let skip = match config.skip_init {
            SkipInit::Bicubic => bicubic_skip(config.scale)?,
            SkipInit::Random => ConvWeight::random(3 * r2, 3, 5, 1.0, &mut rng)?,
        };
        Ok(Self {
            config,
            head,
            blocks,
            tail,
            skip,
        })
    }

    pub fn scale(&self) -> usize {
        self.config.scale
    }

    pub fn trunk_width(&self) -> usize {
        self.config.block.trunk_width
    }

    pub fn register(&self, g: &mut Graph<T>) -> SupernetIds {
        let mut order = Vec::new();
        let head = self.head.register(g);
        order.extend([head.0, head.1]);
        let blocks: Vec<BlockIds> = self
            .blocks
            .iter()
            .map(|b| {
                let ids = b.register(g);
                for c in &ids.convs {
                    order.extend([c.w, c.b, c.m]);
                }
                order.extend([ids.alpha_s, ids.alpha_b]);
                ids
            })
            .collect();
        let tail = self.tail.register(g);
        let skip = self.skip.register(g);
        order.extend([tail.0, tail.1, skip.0, skip.1]);
        SupernetIds {
            head,
            blocks,
            tail,
            skip,
            order,
        }
    }

    /// Every parameter tensor, in registration order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        let mut out: Vec<&mut Tensor4<T>> = vec![&mut self.head.weight, &mut self.head.bias];
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out.extend([
            &mut self.tail.weight,
            &mut self.tail.bias,
            &mut self.skip.weight,
            &mut self.skip.bias,
        ]);
        out
    }

    pub fn param_kinds(&self) -> Vec<ParamKind> {
        let mut out = vec![ParamKind::Weight; 2];
        for _ in &self.blocks {
            for _ in 0..BLOCK_CONVS {
                out.extend([ParamKind::Weight, ParamKind::Weight, ParamKind::Mask]);
            }
            out.extend([ParamKind::Alpha, ParamKind::Alpha]);
        }
        out.extend([ParamKind::Weight; 4]);
        out
    }

    /// Copies tape gradients of the registered parameters into their tensors.
    pub fn collect_grads(&mut self, g: &Graph<T>, ids: &SupernetIds) {
        for (p, &id) in self.params_mut().into_iter().zip(ids.order()) {
            if let Some(gr) = g.grad(id) {
                p.accumulate_grad(gr);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    /// Forward pass producing the SR image and the accumulated predicted
    /// latency `v_N = v_0 + Σ β_b·v_c`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        ids: &SupernetIds,
        lr: NodeId,
        speed: &SpeedMLP<T>,
        speed_ids: &SpeedIds,
    ) -> Result<ModelTrace> {
        self.forward_with(g, ids, lr, speed, speed_ids, None)
    }

    /// [`SupernetModel::forward`] with the binary masks and path indicators
    /// optionally replaced by free leaves (one entry per block).
    pub fn forward_with(
        &self,
        g: &mut Graph<T>,
        ids: &SupernetIds,
        lr: NodeId,
        speed: &SpeedMLP<T>,
        speed_ids: &SpeedIds,
        free: Option<&[FreeGates<T>]>,
    ) -> Result<ModelTrace> {
        if g.shape(lr)[1] != 3 {
            return Err(Error::shape("model_forward", format!("input must have 3 channels, got {:?}", g.shape(lr))));
        }
        if let Some(f) = free {
            if f.len() != self.blocks.len() {
                return Err(Error::shape("model_forward", "one FreeGates entry per block"));
            }
        }
        let r = self.config.scale;
        let mut a = g.conv2d(lr, ids.head.0, ids.head.1)?;
        let mut v = g.scalar_constant(T::of(self.config.v0));
        let mut traces = Vec::with_capacity(self.blocks.len());
        for (i, (blk, bids)) in self.blocks.iter().zip(&ids.blocks).enumerate() {
            let tr = adaptive_block_forward(g, a, v, blk, bids, speed, speed_ids, free.map(|f| &f[i]))?;
            a = tr.out;
            v = tr.v;
            traces.push(tr);
        }
        let t = g.conv2d(a, ids.tail.0, ids.tail.1)?;
        let t = g.pixel_shuffle(t, r)?;
        let s = g.conv2d(lr, ids.skip.0, ids.skip.1)?;
        let s = g.pixel_shuffle(s, r)?;
        let sr = g.add(t, s)?;
        Ok(ModelTrace { sr, v, blocks: traces })
    }

    /// Gradient-free forward on a batch; returns `(sr, v_N)`.
    pub fn infer(&self, lr: &Tensor4<T>, speed: &SpeedMLP<T>) -> Result<(Tensor4<T>, T)> {
        let mut g = Graph::new();
        let x = g.constant(lr);
        let mut frozen = self.clone();
        frozen.params_mut().into_iter().for_each(|p| p.requires_grad = false);
        let ids = frozen.register(&mut g);
        let sids = speed.register(&mut g, false);
        let tr = frozen.forward(&mut g, &ids, x, speed, &sids)?;
        Ok((g.tensor(tr.sr), g.item(tr.v)))
    }

    /// Per-block `(effective widths, uses block path)`.
    pub fn architecture(&self) -> Vec<([usize; WIDTH_ARITY], bool)> {
        self.blocks
            .iter()
            .map(|b| (b.block.effective_widths(), b.uses_block()))
            .collect()
    }

    /// `v_N` recomputed outside the tape: `v_0 + Σ_{active} predict(widths)`.
    pub fn predicted_latency(&self, speed: &SpeedMLP<T>) -> Result<T> {
        let mut v = T::of(self.config.v0);
        for (w, on) in self.architecture() {
            if on {
                v += speed.predict(&w.map(T::of_usize))?.ms;
            }
        }
        Ok(v)
    }

    pub fn cast<U: Scalar>(&self) -> SupernetModel<U> {
        SupernetModel {
            config: self.config.clone(),
            head: self.head.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| AdaptiveSRBlock {
                    block: MaskedSRBlock {
                        convs: std::array::from_fn(|l| super::block::MaskedConv {
                            conv: b.block.convs[l].conv.cast(),
                            mask: super::block::MaskLayer {
                                m: b.block.convs[l].mask.m.cast(),
                                thres: U::of(b.block.convs[l].mask.thres.to_f64_lossy()),
                            },
                        }),
                        trunk_width: b.block.trunk_width,
                    },
                    alpha_s: b.alpha_s.cast(),
                    alpha_b: b.alpha_b.cast(),
                })
                .collect(),
            tail: self.tail.cast(),
            skip: self.skip.cast(),
        }
    }

    pub fn to_container(&self) -> Container {
        let c = &self.config;
        let mut out = Container::new();
        out.set("kind", "supernet");
        out.set("trunk_width", c.block.trunk_width);
        out.set("widths", join(&c.block.widths));
        out.set("kernels", join(&c.block.kernels));
        out.set("n_blocks", c.n_blocks);
        out.set("scale", c.scale);
        out.set("thres", c.thres);
        out.set("v0", c.v0);
        out.set("seed", c.seed);
        out.set(
            "skip_init",
            match c.skip_init {
                SkipInit::Bicubic => "bicubic",
                SkipInit::Random => "random",
            },
        );
        out.push("head.weight", &self.head.weight);
        out.push("head.bias", &self.head.bias);
        for (i, b) in self.blocks.iter().enumerate() {
            for (l, mc) in b.block.convs.iter().enumerate() {
                out.push(format!("block{i}.conv{}.weight", l + 1), &mc.conv.weight);
                out.push(format!("block{i}.conv{}.bias", l + 1), &mc.conv.bias);
                out.push(format!("block{i}.mask{}", l + 1), &mc.mask.m);
            }
            out.push(format!("block{i}.alpha_s"), &b.alpha_s);
            out.push(format!("block{i}.alpha_b"), &b.alpha_b);
        }
        out.push("tail.weight", &self.tail.weight);
        out.push("tail.bias", &self.tail.bias);
        out.push("skip.weight", &self.skip.weight);
        out.push("skip.bias", &self.skip.bias);
        out
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.get("kind")? != "supernet" {
            return Err(Error::InvalidArgument(format!("expected a supernet checkpoint, found `{}`", c.get("kind")?)));
        }
        let config = SupernetConfig {
            block: BlockConfig {
                trunk_width: c.get_parsed("trunk_width")?,
                widths: split3(c.get("widths")?)?,
                kernels: split3(c.get("kernels")?)?,
            },
            n_blocks: c.get_parsed("n_blocks")?,
            scale: c.get_parsed("scale")?,
            thres: c.get_parsed("thres")?,
            v0: c.get_parsed("v0")?,
            seed: c.get_parsed("seed")?,
            skip_init: match c.get("skip_init")? {
                "bicubic" => SkipInit::Bicubic,
                _ => SkipInit::Random,
            },
        };
        config.validate()?;
        let mut model = Self::new(config)?;
        let mut rd = c.reader();
        let mut load = |name: String, t: &mut Tensor4<T>| -> Result<()> {
            let v: Tensor4<T> = rd.next(&name)?;
            if v.shape() != t.shape() {
                return Err(Error::shape("checkpoint", format!("{name}: {:?} vs {:?}", v.shape(), t.shape())));
            }
            t.data_mut().copy_from_slice(v.data());
            Ok(())
        };
        load("head.weight".into(), &mut model.head.weight)?;
        load("head.bias".into(), &mut model.head.bias)?;
        for (i, b) in model.blocks.iter_mut().enumerate() {
            for (l, mc) in b.block.convs.iter_mut().enumerate() {
                load(format!("block{i}.conv{}.weight", l + 1), &mut mc.conv.weight)?;
                load(format!("block{i}.conv{}.bias", l + 1), &mut mc.conv.bias)?;
                load(format!("block{i}.mask{}", l + 1), &mut mc.mask.m)?;
            }
            load(format!("block{i}.alpha_s"), &mut b.alpha_s)?;
            load(format!("block{i}.alpha_b"), &mut b.alpha_b)?;
        }
        load("tail.weight".into(), &mut model.tail.weight)?;
        load("tail.bias".into(), &mut model.tail.bias)?;
        load("skip.weight".into(), &mut model.skip.weight)?;
        load("skip.bias".into(), &mut model.skip.bias)?;
        rd.finish()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?)
    }
}

pub(crate) fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub(crate) fn split3(s: &str) -> Result<[usize; 3]> {
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|_| Error::InvalidArgument(format!("bad list `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    v.try_into().map_err(|_| Error::InvalidArgument(format!("expected 3 values in `{s}`")))
}
