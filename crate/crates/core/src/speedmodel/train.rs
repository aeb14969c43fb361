use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mlp::{NormalizationSpec, SpeedMLP, DEFAULT_HIDDEN};
use crate::diffcore::{AdamConfig, AdamState, Graph, Tensor4};
use crate::error::{Error, Result};
use crate::latlab::{LatencyDataset, WIDTH_ARITY};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedTrainConfig {
    /// Fraction of records used for training; the rest validates.
    pub split: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    /// Cosine-anneal the learning rate from `lr` to zero over the run.
    pub cosine: bool,
}

impl SpeedTrainConfig {
    /// Settings for measured host datasets (a few hundred to a thousand
    /// records): small batches and more steps. The default schedule stops
    /// short of a good fit at that size.
    pub fn measured() -> Self {
        Self {
            epochs: 500,
            lr: 1e-3,
            batch_size: Some(32),
            ..Self::default()
        }
    }
}

impl Default for SpeedTrainConfig {
    fn default() -> Self {
        Self {
            split: 0.9,
            epochs: 400,
            lr: 2e-3,
            seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            batch_size: Some(128),
            cosine: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedTrainReport {
    pub train_mape: f64,
    pub val_mape: f64,
    pub final_loss: f64,
    pub train_len: usize,
    pub val_len: usize,
}

/// Mean of `|pred - t| / t`.
pub fn mape(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).abs() / t).sum::<f64>() / target.len().max(1) as f64
}

fn rows<T: Scalar>(ds: &LatencyDataset, idx: &[usize]) -> (Vec<[T; WIDTH_ARITY]>, Vec<f64>) {
    idx.iter()
        .map(|&i| {
            let r = &ds.records[i];
            (r.config.f.map(|v| T::of_usize(v)), r.t_ms)
        })
        .unzip()
}

/// Fits a [`SpeedMLP`] to `ds` by Adam on mean squared error in ms and
/// returns it with train/validation MAPE.
pub fn train_speed_model<T: Scalar>(ds: &LatencyDataset, cfg: &SpeedTrainConfig) -> Result<(SpeedMLP<T>, SpeedTrainReport)> {
    if ds.len() < 10 {
        return Err(Error::InvalidArgument(format!("speed model needs >= 10 records, got {}", ds.len())));
    }
    if !(cfg.split > 0.0 && cfg.split < 1.0) {
        return Err(Error::InvalidArgument(format!("split must lie in (0, 1), got {}", cfg.split)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let n_train = (ds.len() as f64 * cfg.split).round() as usize;
    let (train_idx, val_idx) = order.split_at(n_train);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::InvalidArgument("train/validation split leaves an empty side".into()));
    }

    let norm = NormalizationSpec::from_maxima(&ds.meta.maxima);
    let scale = norm.latency_scale;
    let mut model = SpeedMLP::<T>::new(&cfg.hidden, norm, &mut rng)?;
    let (train_x, train_t) = rows::<T>(ds, train_idx);
    let (val_x, val_t) = rows::<T>(ds, val_idx);
    let mean_t = train_t.iter().sum::<f64>() / train_t.len() as f64;
    if let Some(last) = model.layers_mut().last_mut() {
        last.bias.data_mut()[0] = T::of(mean_t / scale);
    }

    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let bs = cfg.batch_size.unwrap_or(train_x.len()).clamp(1, train_x.len());
    let mut perm: Vec<usize> = (0..train_x.len()).collect();
    let mut final_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        if cfg.cosine {
            let frac = epoch as f64 / cfg.epochs as f64;
            adam.config.lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        }
        if bs < train_x.len() {
            perm.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in perm.chunks(bs) {
            let x: Vec<T> = chunk.iter().flat_map(|&i| train_x[i]).collect();
            let t: Vec<T> = chunk.iter().map(|&i| T::of(train_t[i] / scale)).collect();
            let mut g = Graph::new();
            let xn = g.constant(&Tensor4::from_vec([chunk.len(), WIDTH_ARITY, 1, 1], x)?);
            let tn = g.constant(&Tensor4::from_vec([chunk.len(), 1, 1, 1], t)?);
            let ids = model.register(&mut g, true);
            let y = model.forward_node(&mut g, &ids, xn)?;
            let loss = g.mse(y, tn)?;
            let lv = g.item(loss).to_f64_lossy();
            if !lv.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("speed model loss {lv}"),
                });
            }
            epoch_loss += lv * chunk.len() as f64;
            g.backward(loss)?;
            let mut params = model.params_mut();
            for (p, id) in params.iter_mut().zip(ids.all()) {
                p.zero_grad();
                if let Some(gr) = g.grad(id) {
                    p.accumulate_grad(gr);
                }
            }
            adam.step(&mut params)?;
        }
        final_loss = epoch_loss / train_x.len() as f64;
        if epoch % 100 == 0 {
            log::debug!("speed model epoch {epoch}: mse {final_loss:.6}");
        }
    }

    let eval = |xs: &[[T; WIDTH_ARITY]], ts: &[f64]| -> Result<f64> {
        let p: Vec<f64> = model.predict_batch(xs)?.into_iter().map(|v| v.to_f64_lossy()).collect();
        Ok(mape(&p, ts))
    };
    let report = SpeedTrainReport {
        train_mape: eval(&train_x, &train_t)?,
        val_mape: eval(&val_x, &val_t)?,
        final_loss,
        train_len: train_x.len(),
        val_len: val_x.len(),
    };
    for p in model.params_mut() {
        p.zero_grad();
    }
    Ok((model, report))
}

/// `f1,f2,f3,f4,t_ms,pred_ms` for every record, in dataset order.
pub fn prediction_table<T: Scalar>(model: &SpeedMLP<T>, ds: &LatencyDataset) -> Result<String> {
    let rows: Vec<[T; WIDTH_ARITY]> = ds.records.iter().map(|r| r.config.f.map(T::of_usize)).collect();
    let preds = model.predict_batch(&rows)?;
    let mut s = String::from("f1,f2,f3,f4,t_ms,pred_ms\n");
    for (r, p) in ds.records.iter().zip(preds) {
        let f = r.config.f;
        s.push_str(&format!("{},{},{},{},{},{}\n", f[0], f[1], f[2], f[3], r.t_ms, p.to_f64_lossy()));
    }
    Ok(s)
}
