use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{lr_factor, SearchConfig};
use super::loss::{speed_loss, total_loss};
use crate::container::Container;
use crate::dataeval::{patches_to_tensors, sample_from_pair, LrHrPair, PatchPair};
use crate::diffcore::{AdamState, Graph, Tensor4};
use crate::error::{Error, Result};
use crate::latlab::WIDTH_ARITY;
use crate::scalar::Scalar;
use crate::speedmodel::SpeedMLP;
use crate::srnet::{ParamKind, SupernetModel};

const STATE_MAGIC: &[u8; 8] = b"SRNASRUN";
const STATE_VERSION: u32 = 1;

/// Snapshot at the end of an epoch; losses are means over its steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub l_sr: f64,
    pub l_spd: f64,
    pub l_total: f64,
    pub v_n: f64,
    /// Per block: effective widths and whether the block path is selected.
    pub blocks: Vec<([usize; WIDTH_ARITY], bool)>,
}

impl TrainState {
    pub fn active_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| b.1).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub l_sr: f64,
    pub l_spd: f64,
    pub l_total: f64,
    pub v_n: f64,
}

/// Patches for one epoch. The generator depends only on `(seed, epoch)`,
/// so a resumed run sees the same data as an uninterrupted one.
pub fn epoch_patches(data: &[LrHrPair], cfg: &SearchConfig, epoch: usize) -> Result<Vec<PatchPair>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch as u64 + 1);
    let mut out = Vec::with_capacity(cfg.patches_per_epoch);
    for _ in 0..cfg.patches_per_epoch {
        let i = rng.gen_range(0..data.len());
        out.extend(sample_from_pair(&data[i], cfg.patch_size, 1, &mut rng)?);
    }
    Ok(out)
}

/// Per-parameter learning rates; kinds not in `train` get zero.
pub fn group_lrs(kinds: &[ParamKind], cfg: &SearchConfig, factor: f64, train: &[ParamKind]) -> Vec<f64> {
    kinds
        .iter()
        .map(|k| {
            if !train.contains(k) {
                return 0.0;
            }
            factor
                * match k {
                    ParamKind::Weight => cfg.lr,
                    ParamKind::Mask => cfg.mask_lr(),
                    ParamKind::Alpha => cfg.alpha_lr(),
                }
        })
        .collect()
}

/// Forward, `mae + gamma · hinge(v_N, v_T)`, one backward, one Adam step.
/// The speed model is recorded as constants and never updated.
#[allow(clippy::too_many_arguments)]
pub fn search_step<T: Scalar>(
    model: &mut SupernetModel<T>,
    speed: &SpeedMLP<T>,
    lr_img: &Tensor4<T>,
    hr_img: &Tensor4<T>,
    cfg: &SearchConfig,
    adam: &mut AdamState<T>,
    lrs: &[f64],
) -> Result<StepStats> {
    let mut g = Graph::new();
    let x = g.constant(lr_img);
    let y = g.constant(hr_img);
    let ids = model.register(&mut g);
    let sids = speed.register(&mut g, false);
    let tr = model.forward(&mut g, &ids, x, speed, &sids)?;
    let l_sr = g.mae(tr.sr, y)?;
    let l_spd = speed_loss(&mut g, tr.v, T::of(cfg.v_t));
    let loss = total_loss(&mut g, l_sr, l_spd, T::of(cfg.gamma))?;
    let stats = StepStats {
        l_sr: g.item(l_sr).to_f64_lossy(),
        l_spd: g.item(l_spd).to_f64_lossy(),
        l_total: g.item(loss).to_f64_lossy(),
        v_n: g.item(tr.v).to_f64_lossy(),
    };
    if !stats.l_total.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            detail: format!(
                "non-finite loss (l_sr {}, l_spd {}, v_n {})",
                stats.l_sr, stats.l_spd, stats.v_n
            ),
        });
    }
    g.backward(loss)?;
    model.zero_grad();
    model.collect_grads(&g, &ids);
    adam.step_with_lrs(&mut model.params_mut(), lrs)?;
    model.zero_grad();
    Ok(stats)
}

/// Everything needed to continue a search exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchState<T> {
    pub model: SupernetModel<T>,
    pub adam: AdamState<T>,
    pub history: Vec<TrainState>,
}

impl<T: Scalar> SearchState<T> {
    pub fn new(model: SupernetModel<T>, cfg: &SearchConfig) -> Self {
        Self {
            model,
            adam: AdamState::new(cfg.adam),
            history: Vec::new(),
        }
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = self.model.to_container();
        c.set("kind", "search_state");
        c.set("adam_step", self.adam.step_count());
        c.set("history", history_csv(&self.history));
        let (m, v) = self.adam.moments();
        c.set("adam_buffers", m.len());
        for (i, (a, b)) in m.iter().zip(v).enumerate() {
            c.push(format!("adam.m{i}"), &Tensor4::vector(a.clone()));
            c.push(format!("adam.v{i}"), &Tensor4::vector(b.clone()));
        }
        c.save(path, STATE_MAGIC, STATE_VERSION)
    }

    pub fn load(path: &Path, cfg: &SearchConfig) -> Result<Self> {
        let mut c = Container::load(path, STATE_MAGIC, STATE_VERSION, "search state")?;
        if c.get("kind")? != "search_state" {
            return Err(Error::InvalidArgument("not a search state file".into()));
        }
        let n: usize = c.get_parsed("adam_buffers")?;
        let step: u64 = c.get_parsed("adam_step")?;
        let history = parse_history_csv(c.get("history")?)?;
        let split = c.tensors.len() - 2 * n;
        let adam_tensors = c.tensors.split_off(split);
        c.set("kind", "supernet");
        let model = SupernetModel::from_container(&c)?;
        let mut first = Vec::with_capacity(n);
        let mut second = Vec::with_capacity(n);
        for (i, pair) in adam_tensors.chunks(2).enumerate() {
            if pair[0].0 != format!("adam.m{i}") || pair[1].0 != format!("adam.v{i}") {
                return Err(Error::InvalidArgument(format!("search state: unexpected tensor `{}`", pair[0].0)));
            }
            first.push(pair[0].2.iter().map(|&v| T::of(v)).collect());
            second.push(pair[1].2.iter().map(|&v| T::of(v)).collect());
        }
        Ok(Self {
            model,
            adam: AdamState::from_parts(cfg.adam, step, first, second)?,
            history,
        })
    }
}

/// Trains only the conv weights for `epochs` epochs with the speed loss off.
pub fn warmup<T: Scalar>(model: &mut SupernetModel<T>, speed: &SpeedMLP<T>, data: &[LrHrPair], cfg: &SearchConfig, epochs: usize) -> Result<()> {
    let wcfg = SearchConfig {
        gamma: 0.0,
        seed: cfg.seed ^ 0x5eed_0f_3a4d,
        ..cfg.clone()
    };
    let mut adam = AdamState::new(cfg.adam);
    let lrs = group_lrs(&model.param_kinds(), &wcfg, 1.0, &[ParamKind::Weight]);
    for epoch in 0..epochs {
        for batch in epoch_patches(data, &wcfg, epoch)?.chunks(cfg.batch_size) {
            let (x, y) = patches_to_tensors::<T>(batch)?;
            search_step(model, speed, &x, &y, &wcfg, &mut adam, &lrs).map_err(|e| with_epoch(e, epoch))?;
        }
    }
    Ok(())
}

fn with_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Diverged { detail, .. } => Error::Diverged { epoch, detail },
        other => other,
    }
}

/// Runs the remaining search epochs of `state`. `on_epoch` sees the state
/// after every epoch, e.g. to write a checkpoint.
pub fn run_search<T: Scalar>(
    state: &mut SearchState<T>,
    speed: &SpeedMLP<T>,
    data: &[LrHrPair],
    cfg: &SearchConfig,
    mut on_epoch: impl FnMut(&SearchState<T>) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let kinds = state.model.param_kinds();
    let all = [ParamKind::Weight, ParamKind::Mask, ParamKind::Alpha];
    for epoch in state.epoch()..cfg.search_epochs {
        let factor = lr_factor(epoch, &cfg.search_halve_epochs);
        let lrs = group_lrs(&kinds, cfg, factor, &all);
        let (mut s_sr, mut s_spd, mut s_tot, mut n) = (0.0, 0.0, 0.0, 0usize);
        for batch in epoch_patches(data, cfg, epoch)?.chunks(cfg.batch_size) {
            let (x, y) = patches_to_tensors::<T>(batch)?;
            let st = search_step(&mut state.model, speed, &x, &y, cfg, &mut state.adam, &lrs)
                .map_err(|e| with_epoch(e, epoch))?;
            s_sr += st.l_sr;
            s_spd += st.l_spd;
            s_tot += st.l_total;
            n += 1;
        }
        let n = n as f64;
        let snap = TrainState {
            epoch,
            step: state.adam.step_count(),
            lr: cfg.lr * factor,
            l_sr: s_sr / n,
            l_spd: s_spd / n,
            l_total: s_tot / n,
            v_n: state.model.predicted_latency(speed)?.to_f64_lossy(),
            blocks: state.model.architecture(),
        };
        log::info!(
            "search epoch {epoch}: l_sr {:.5} l_spd {:.4} v_n {:.3} ms, {} active blocks",
            snap.l_sr,
            snap.l_spd,
            snap.v_n,
            snap.active_blocks()
        );
        state.history.push(snap);
        on_epoch(state)?;
    }
    Ok(())
}

pub fn history_header(n_blocks: usize) -> String {
    let mut h = String::from("epoch,l_sr,l_spd,l_total,v_n,active_blocks");
    for b in 0..n_blocks {
        let _ = write!(h, ",b{b}_on,b{b}_f1,b{b}_f2,b{b}_f3,b{b}_f4");
    }
    h.push_str(",step,lr");
    h
}

/// History as CSV; floats use the shortest exact representation.
pub fn history_csv(rows: &[TrainState]) -> String {
    let n_blocks = rows.first().map_or(0, |r| r.blocks.len());
    let mut s = history_header(n_blocks);
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{},{},{},{},{},{}", r.epoch, r.l_sr, r.l_spd, r.l_total, r.v_n, r.active_blocks());
        for (w, on) in &r.blocks {
            let _ = write!(s, ",{},{},{},{},{}", u8::from(*on), w[0], w[1], w[2], w[3]);
        }
        let _ = writeln!(s, ",{},{}", r.step, r.lr);
    }
    s
}

/// Inverse of [`history_csv`].
pub fn parse_history_csv(text: &str) -> Result<Vec<TrainState>> {
    let mut lines = text.lines();
    let Some(_header) = lines.next() else {
        return Ok(Vec::new());
    };
    lines
        .enumerate()
        .map(|(i, line)| {
            let err = |m: &str| Error::Parse {
                path: "<history>".into(),
                line: i + 2,
                msg: m.to_string(),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 8 || (f.len() - 8) % 5 != 0 {
                return Err(err("wrong field count"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
            let int = |s: &str| s.parse::<usize>().map_err(|_| err("bad integer"));
            let n_blocks = (f.len() - 8) / 5;
            let blocks = (0..n_blocks)
                .map(|b| {
                    let o = 6 + 5 * b;
                    Ok(([int(f[o + 1])?, int(f[o + 2])?, int(f[o + 3])?, int(f[o + 4])?], f[o] == "1"))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TrainState {
                epoch: int(f[0])?,
                l_sr: num(f[1])?,
                l_spd: num(f[2])?,
                l_total: num(f[3])?,
                v_n: num(f[4])?,
                blocks,
                step: f[f.len() - 2].parse().map_err(|_| err("bad step"))?,
                lr: num(f[f.len() - 1])?,
            })
        })
        .collect()
}
