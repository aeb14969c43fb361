//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srnas::dataeval::ImageRGB;
use srnas::diffcore::{Graph, NodeId, Tensor4};
use srnas::nastrain::{speed_loss, total_loss};
use srnas::speedmodel::{NormalizationSpec, SpeedMLP, DEFAULT_HIDDEN};
use srnas::srnet::{FreeGates, ModelTrace, SupernetConfig, SupernetIds, SupernetModel};

pub type Build = Box<dyn Fn(&mut Graph<f64>, &[NodeId]) -> NodeId>;

/// One random instance of an op: its inputs and how to apply it.
pub struct OpCase {
    pub inputs: Vec<Tensor4<f64>>,
    pub build: Build,
}

fn t(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::uniform(shape, -1.0, 1.0, rng)
}

/// Values bounded away from `kinks` by at least `gap`.
fn away(shape: [usize; 4], kinks: &[f64], gap: f64, rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if kinks.iter().all(|k| (v - k).abs() >= gap) {
                break v;
            }
        })
        .collect();
    Tensor4::from_vec(shape, data).unwrap()
}

/// Every smooth tape op, with a generator of random instances. The
/// straight-through ops (binarize, path indicators) have no finite-difference
/// gradient and are checked against their defined backward rule instead.
pub fn op_names() -> &'static [&'static str] {
    &[
        "conv2d_k1", "conv2d_k3", "conv2d_k5", "channel_scale", "relu", "add", "scalar_mul", "scale",
        "add_const", "div_const", "clamp", "pixel_shuffle", "pixel_unshuffle", "linear", "mae", "mse", "sum",
        "concat", "scatter_add_channels",
    ]
}

pub fn op_case(name: &str, rng: &mut ChaCha8Rng) -> OpCase {
    let b = rng.gen_range(1..=2);
    let c = rng.gen_range(1..=3);
    let h = rng.gen_range(2..=5);
    let w = rng.gen_range(2..=5);
    let x = [b, c, h, w];
    let case = |inputs: Vec<Tensor4<f64>>, build: Build| OpCase { inputs, build };
    match name {
        "conv2d_k1" | "conv2d_k3" | "conv2d_k5" => {
            let k = match name {
                "conv2d_k1" => 1,
                "conv2d_k3" => 3,
                _ => 5,
            };
            let o = rng.gen_range(1..=3);
            case(
                vec![t(x, rng), t([o, c, k, k], rng), t([o, 1, 1, 1], rng)],
                Box::new(|g, i| g.conv2d(i[0], i[1], i[2]).unwrap()),
            )
        }
        "channel_scale" => case(vec![t(x, rng), t([c, 1, 1, 1], rng)], Box::new(|g, i| g.channel_scale(i[0], i[1]).unwrap())),
        "relu" => case(vec![away(x, &[0.0], 0.05, rng)], Box::new(|g, i| g.relu(i[0]))),
        "add" => case(vec![t(x, rng), t(x, rng)], Box::new(|g, i| g.add(i[0], i[1]).unwrap())),
        "scalar_mul" => case(vec![t(x, rng), t([1, 1, 1, 1], rng)], Box::new(|g, i| g.scalar_mul(i[0], i[1]).unwrap())),
        "scale" => {
            let k: f64 = rng.gen_range(-2.0..2.0);
            case(vec![t(x, rng)], Box::new(move |g, i| g.scale(i[0], k)))
        }
        "add_const" => {
            let k: f64 = rng.gen_range(-2.0..2.0);
            case(vec![t(x, rng)], Box::new(move |g, i| g.add_const(i[0], k)))
        }
        "div_const" => {
            let d: Vec<f64> = (0..w).map(|_| rng.gen_range(0.5..3.0)).collect();
            case(vec![t(x, rng)], Box::new(move |g, i| g.div_const(i[0], &d).unwrap()))
        }
        "clamp" => case(vec![away(x, &[-0.4, 0.6], 0.05, rng)], Box::new(|g, i| g.clamp(i[0], -0.4, 0.6))),
        "pixel_shuffle" => {
            let r = rng.gen_range(2..=3);
            case(vec![t([b, c * r * r, h, w], rng)], Box::new(move |g, i| g.pixel_shuffle(i[0], r).unwrap()))
        }
        "pixel_unshuffle" => {
            let r = 2;
            case(vec![t([b, c, h * r, w * r], rng)], Box::new(move |g, i| g.pixel_unshuffle(i[0], r).unwrap()))
        }
        "linear" => {
            let (rows, inp, out) = (rng.gen_range(1..=4), rng.gen_range(1..=5), rng.gen_range(1..=4));
            case(
                vec![t([rows, inp, 1, 1], rng), t([out, inp, 1, 1], rng), t([out, 1, 1, 1], rng)],
                Box::new(|g, i| g.linear(i[0], i[1], i[2]).unwrap()),
            )
        }
        "mae" => {
            // Keep every residual clear of the |·| kink.
            let p = t(x, rng);
            let d = away(x, &[0.0], 0.05, rng);
            let q = Tensor4::from_vec(x, p.data().iter().zip(d.data()).map(|(a, b)| a + b).collect()).unwrap();
            case(vec![p, q], Box::new(|g, i| g.mae(i[0], i[1]).unwrap()))
        }
        "mse" => case(vec![t(x, rng), t(x, rng)], Box::new(|g, i| g.mse(i[0], i[1]).unwrap())),
        "sum" => case(vec![t(x, rng)], Box::new(|g, i| g.sum(i[0]))),
        "concat" => {
            let parts = rng.gen_range(1..=3);
            let inputs = (0..parts).map(|_| t([1, rng.gen_range(1..=4), 1, 1], rng)).collect();
            case(inputs, Box::new(|g, i| g.concat(i)))
        }
        "scatter_add_channels" => {
            let sc = rng.gen_range(1..=4);
            let idx: Vec<usize> = (0..sc).map(|_| rng.gen_range(0..c)).collect();
            case(
                vec![t(x, rng), t([b, sc, h, w], rng)],
                Box::new(move |g, i| g.scatter_add_channels(i[0], i[1], &idx).unwrap()),
            )
        }
        other => panic!("unknown op {other}"),
    }
}

/// `L = mse(op(inputs), target)` for a fixed random target.
fn loss(inputs: &[Tensor4<f64>], build: &Build, target: &mut Option<Tensor4<f64>>, seed: u64) -> (Graph<f64>, Vec<NodeId>, NodeId) {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|x| g.leaf(&x.clone().trainable())).collect();
    let y = build(&mut g, &ids);
    let tgt = target.get_or_insert_with(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::uniform(g.shape(y), -1.0, 1.0, &mut rng)
    });
    let tn = g.constant(tgt);
    let l = g.mse(y, tn).unwrap();
    (g, ids, l)
}

/// Max relative error between the tape gradient and a central difference
/// with step `h`, over every input element. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps exact zeros comparable.
pub fn gradcheck(case: &OpCase, h: f64, seed: u64) -> f64 {
    let mut target = None;
    let (mut g, ids, l) = loss(&case.inputs, &case.build, &mut target, seed);
    g.backward(l).unwrap();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(&case.inputs)
        .map(|(id, x)| g.grad(*id).map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; x.len()]))
        .collect();
    let mut worst = 0.0f64;
    for (k, x) in case.inputs.iter().enumerate() {
        for j in 0..x.len() {
            let eval = |delta: f64| {
                let mut inputs = case.inputs.clone();
                inputs[k].data_mut()[j] += delta;
                let (g, _, l) = loss(&inputs, &case.build, &mut target.clone(), seed);
                g.item(l)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic[k][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Untrained speed model over the default block maxima; smooth and cheap,
/// enough wherever only the shape of the latency term matters.
pub fn random_speed(seed: u64) -> SpeedMLP<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SpeedMLP::new(&DEFAULT_HIDDEN, NormalizationSpec::from_maxima(&[16, 64, 48, 16]), &mut rng).unwrap()
}

/// A small supernet with masks and path parameters drawn at random, so that
/// some channels, some whole convs and some blocks are switched off.
pub fn random_supernet(seed: u64, n_blocks: usize, scale: usize) -> SupernetModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let mut m = SupernetModel::<f64>::new(SupernetConfig {
        n_blocks,
        scale,
        seed,
        ..Default::default()
    })
    .unwrap();
    let thres = m.config.thres;
    for blk in &mut m.blocks {
        let p_on: f64 = rng.gen_range(0.0..1.0);
        for conv in &mut blk.block.convs {
            // Occasionally kill a whole conv.
            let kill = rng.gen_bool(0.1);
            for v in conv.mask.m.data_mut() {
                let on = !kill && rng.gen_bool(p_on);
                *v = if on { rng.gen_range(thres + 1e-3..1.0) } else { rng.gen_range(0.0..=thres) };
            }
        }
        blk.alpha_s.data_mut()[0] = rng.gen_range(-1.0..1.0);
        blk.alpha_b.data_mut()[0] = if rng.gen_bool(0.2) { blk.alpha_s.data()[0] } else { rng.gen_range(-1.0..1.0) };
    }
    m
}

/// Runs the supernet on a random loss; returns the tape and its trace.
pub fn random_loss(net: &SupernetModel<f64>, seed: u64, free: Option<&[FreeGates<f64>]>) -> (Graph<f64>, SupernetIds, ModelTrace) {
    let speed = random_speed(seed);
    let lr = random_lr(seed, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a);
    let target = Tensor4::uniform([1, 3, 8, 10], 0.0, 1.0, &mut rng);
    let gamma: f64 = rng.gen_range(0.0..0.1);
    let mut g = Graph::new();
    let x = g.constant(&lr);
    let ids = net.register(&mut g);
    let sids = speed.register(&mut g, false);
    let tr = net.forward_with(&mut g, &ids, x, &speed, &sids, free).unwrap();
    let t = g.constant(&target);
    let l_sr = g.mae(tr.sr, t).unwrap();
    // v_T below v_N keeps the hinge active so the latency path carries gradient.
    let v_t = 0.5 * g.item(tr.v);
    let l_spd = speed_loss(&mut g, tr.v, v_t);
    let l = total_loss(&mut g, l_sr, l_spd, gamma).unwrap();
    g.backward(l).unwrap();
    (g, ids, tr)
}

pub fn random_lr(seed: u64, h: usize, w: usize) -> Tensor4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a);
    Tensor4::uniform([1, 3, h, w], 0.0, 1.0, &mut rng)
}

/// Y channel in [0, 255], one pixel at a time.
pub fn ref_luma(img: &ImageRGB) -> Vec<f64> {
    let mut out = Vec::with_capacity(img.width() * img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let [r, g, b] = img.pixel(x, y);
            out.push(16.0 + (65.481 * r as f64 + 128.553 * g as f64 + 24.966 * b as f64) / 255.0);
        }
    }
    out
}

/// PSNR on Y with a `shave`-pixel border removed, as a plain double loop.
pub fn ref_psnr(a: &ImageRGB, b: &ImageRGB, shave: usize) -> f64 {
    let (ya, yb) = (ref_luma(a), ref_luma(b));
    let w = a.width();
    let mut se = 0.0;
    let mut n = 0usize;
    for y in shave..a.height() - shave {
        for x in shave..w - shave {
            let d = ya[y * w + x] - yb[y * w + x];
            se += d * d;
            n += 1;
        }
    }
    10.0 * (255.0f64 * 255.0 / (se / n as f64)).log10()
}

/// SSIM on Y: Gaussian 11×11 window (σ = 1.5), evaluated directly as a 2-D
/// sum at every position where the window fits, then averaged.
pub fn ref_ssim(a: &ImageRGB, b: &ImageRGB) -> f64 {
    let (ya, yb) = (ref_luma(a), ref_luma(b));
    let (w, h) = (a.width(), a.height());
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut acc = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = win[i][j] / total;
                    let p = ya[(y0 + i) * w + x0 + j];
                    let q = yb[(y0 + i) * w + x0 + j];
                    ma += k * p;
                    mb += k * q;
                    saa += k * p * p;
                    sbb += k * q * q;
                    sab += k * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

pub fn noisy_image(w: usize, h: usize, seed: u64) -> ImageRGB {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h * 3).map(|_| rng.gen::<u8>()).collect();
    ImageRGB::new(w, h, data).unwrap()
}
