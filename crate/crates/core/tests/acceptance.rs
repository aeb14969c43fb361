//! Acceptance run: every criterion prints one PASS/FAIL line; the process
//! exits non-zero if any fails.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srnas::dataeval::{
    evaluate, psnr, psnr_y, sample_patches, ssim, synthetic_corpus, LrHrPair, PatchPair,
};
use srnas::diffcore::{select_path, Graph, Tensor4};
use srnas::latlab::{
    build_dataset, measure_latencies, sample_configs, BenchBlock, BuildParams, Fusion, LatencyMode, MeasureParams,
};
use srnas::nastrain::{finetune, hinge, history_csv, run_search, speed_loss, upscale, SearchConfig, SearchState};
use srnas::speedmodel::{prediction_table, train_speed_model, SpeedMLP, SpeedTrainConfig};
use srnas::srnet::{binarize_mask, extract_architecture, FreeGates, SupernetConfig, SupernetModel};

type Outcome = Result<(bool, String), String>;

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn gradient_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut worst_op = "";
    let ops = common::op_names();
    for (k, name) in ops.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
        for inst in 0..20 {
            let err = common::gradcheck(&common::op_case(name, &mut rng), 1e-5, inst);
            if err > worst {
                worst = err;
                worst_op = name;
            }
        }
    }
    Ok((
        worst <= 1e-4,
        format!("{} ops x 20 instances, h=1e-5, max rel err {worst:.2e} ({worst_op}) <= 1e-4", ops.len()),
    ))
}

fn ste_contracts() -> Outcome {
    let mut checked = 0usize;
    for seed in 0..20 {
        let net = common::random_supernet(seed, 4, 2);
        let (g, ids, tr) = common::random_loss(&net, seed, None);
        let free: Vec<FreeGates<f64>> = tr
            .blocks
            .iter()
            .map(|b| FreeGates {
                binaries: b.binaries.map(|n| g.tensor(n)),
                betas: (g.item(b.beta_s), g.item(b.beta_b)),
            })
            .collect();
        let (gf, _, trf) = common::random_loss(&net, seed, Some(&free));
        for (i, (bt, ft)) in tr.blocks.iter().zip(&trf.blocks).enumerate() {
            let bids = ids.block(i);
            for l in 0..3 {
                let dm = g.grad(bids.convs[l].m).ok_or("mask has no gradient")?;
                let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
                if !same(dm, g.grad(bt.binaries[l]).unwrap()) || !same(dm, gf.grad(ft.binaries[l]).unwrap()) {
                    return Ok((false, format!("seed {seed} block {i} conv {}: dL/dm differs from dL/db", l + 1)));
                }
                checked += dm.len();
            }
            let pairs = [
                (g.grad(bids.alpha_s), g.grad(bt.beta_s), gf.grad(ft.beta_s)),
                (g.grad(bids.alpha_b), g.grad(bt.beta_b), gf.grad(ft.beta_b)),
            ];
            for (a, b, f) in pairs {
                let (a, b, f) = (a.unwrap()[0], b.unwrap()[0], f.unwrap()[0]);
                if a.to_bits() != b.to_bits() || a.to_bits() != f.to_bits() {
                    return Ok((false, format!("seed {seed} block {i}: dL/dalpha {a} vs dL/dbeta {b} / {f}")));
                }
                checked += 1;
            }
        }
    }
    Ok((true, format!("20 random supernet losses, {checked} gradient entries bit-equal (mask and path)")))
}

fn binarization_tables() -> Outcome {
    let mut cases = 0;
    for thres in [0.0f64, 0.5, 1.0, -0.25] {
        let below = f64::from_bits(thres.to_bits().wrapping_sub(1));
        let tiny_above = thres + f64::EPSILON * thres.abs().max(1.0);
        let m = [thres - 1.0, below, thres, tiny_above, thres + 1.0, -0.0, 0.0];
        let want: Vec<f64> = m.iter().map(|&v| if v > thres { 1.0 } else { 0.0 }).collect();
        if binarize_mask(&m, thres) != want {
            return Ok((false, format!("binarize_mask at thres {thres}")));
        }
        let mut g = Graph::<f64>::new();
        let n = g.leaf(&Tensor4::vector(m.to_vec()));
        let b = g.binarize(n, thres);
        if g.value(b) != want.as_slice() {
            return Ok((false, format!("tape binarize at thres {thres}")));
        }
        if binarize_mask(&[thres], thres) != [0.0] {
            return Ok((false, "m == thres must give 0".into()));
        }
        cases += m.len() * 2;
    }
    let table = [
        ((0.0, 0.0), (0.0, 1.0)),
        ((1.0, 1.0), (0.0, 1.0)),
        ((-2.5, -2.5), (0.0, 1.0)),
        ((0.0, -0.0), (0.0, 1.0)),
        ((0.1, 0.2), (0.0, 1.0)),
        ((0.2, 0.1), (1.0, 0.0)),
        ((-1.0, 1.0), (0.0, 1.0)),
        ((1.0, -1.0), (1.0, 0.0)),
        ((1e-12, 0.0), (1.0, 0.0)),
    ];
    for ((a_s, a_b), want) in table {
        if select_path(a_s, a_b) != want {
            return Ok((false, format!("select_path({a_s}, {a_b}) != {want:?}")));
        }
        let mut g = Graph::<f64>::new();
        let s = g.leaf(&Tensor4::scalar(a_s));
        let b = g.leaf(&Tensor4::scalar(a_b));
        let (bs, bb) = g.select_path(s, b).map_err(e)?;
        if (g.item(bs), g.item(bb)) != want {
            return Ok((false, format!("tape select_path({a_s}, {a_b})")));
        }
        cases += 2;
    }
    Ok((true, format!("{cases} boundary cases incl. m == thres and alpha_s == alpha_b ties")))
}

fn hinge_loss() -> Outcome {
    let mut zero_grad_cases = 0;
    for i in 0..10 {
        for j in 0..10 {
            let v = 5.0 * i as f64 - 3.3;
            let v_t = 4.5 * j as f64 + 0.2 * (i % 3) as f64;
            let mut g = Graph::<f64>::new();
            let n = g.leaf(&Tensor4::scalar(v).trainable());
            let l = speed_loss(&mut g, n, v_t);
            if g.item(l) != (v - v_t).max(0.0) || hinge(v, v_t) != (v - v_t).max(0.0) {
                return Ok((false, format!("L_SPD({v}, {v_t}) = {}", g.item(l))));
            }
            g.backward(l).map_err(e)?;
            let d = g.grad(n).unwrap()[0];
            if v <= v_t {
                if d != 0.0 {
                    return Ok((false, format!("gradient {d} at v_N {v} <= v_T {v_t}")));
                }
                zero_grad_cases += 1;
            } else if d != 1.0 {
                return Ok((false, format!("gradient {d} at v_N {v} > v_T {v_t}")));
            }
        }
    }
    Ok((true, format!("100 (v_N, v_T) pairs exact; gradient 0 in all {zero_grad_cases} cases with v_N <= v_T")))
}

fn speed_accuracy(analytic_model: &mut Option<SpeedMLP<f64>>) -> Outcome {
    let ds = build_dataset(&BuildParams::default()).map_err(e)?;
    let cfg = SpeedTrainConfig::default();
    let (model, ra) = train_speed_model::<f64>(&ds, &cfg).map_err(e)?;
    let split_ok = ds.len() == 2048 && ra.train_len == 1843 && ra.val_len == 205;
    *analytic_model = Some(model);

    let mp = BuildParams {
        mode: LatencyMode::Measured,
        n: 1024,
        spatial: (24, 24),
        ..Default::default()
    };
    let dm = build_dataset(&mp).map_err(e)?;
    let (_, rm) = train_speed_model::<f64>(&dm, &SpeedTrainConfig::measured()).map_err(e)?;
    Ok((
        split_ok && ra.val_mape <= 0.02 && rm.val_mape <= 0.10,
        format!(
            "analytic n=2048 split {}/{}: val MAPE {:.4} <= 0.02; measured n={} at 24x24: val MAPE {:.4} <= 0.10",
            ra.train_len,
            ra.val_len,
            ra.val_mape,
            dm.len(),
            rm.val_mape
        ),
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn fusion() -> Outcome {
    let configs = sample_configs(100, &[16, 64, 48, 16], (12, 12), 21).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for (i, c) in configs.iter().enumerate() {
        let blk = BenchBlock::<f64>::new(*c, i as u64).map_err(e)?;
        let x = Tensor4::uniform([1, c.f[0], 12, 12], 0.0, 1.0, &mut rng);
        let on = blk.execute(&x, Fusion::On).map_err(e)?;
        let off = blk.execute(&x, Fusion::Off).map_err(e)?;
        worst = worst.max(on.max_abs_diff(&off));
    }
    let timed = &configs[..40];
    let p = MeasureParams::default();
    let fused = median(measure_latencies(timed, &MeasureParams { fusion: Fusion::On, ..p }, 3).map_err(e)?);
    let plain = median(measure_latencies(timed, &MeasureParams { fusion: Fusion::Off, ..p }, 3).map_err(e)?);
    Ok((
        worst <= 1e-6,
        format!(
            "100 configs, max |fused - unfused| {worst:.1e} <= 1e-6; reported: median latency fused {fused:.4} ms vs unfused {plain:.4} ms ({})",
            if fused <= plain { "fused faster" } else { "fused slower on this host" }
        ),
    ))
}

fn compact_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    let (mut skipped, mut dead) = (0, 0);
    for seed in 0..20u64 {
        let scale = if seed % 2 == 0 { 2 } else { 4 };
        let net = common::random_supernet(seed + 500, 4, scale);
        let speed = common::random_speed(seed);
        let lr = common::random_lr(seed, 5, 6);
        let (sr, _) = net.infer(&lr, &speed).map_err(e)?;
        let compact = extract_architecture(&net).map_err(e)?;
        worst = worst.max(compact.infer(&lr).map_err(e)?.max_abs_diff(&sr));
        skipped += net.blocks.iter().filter(|b| !b.uses_block()).count();
        dead += net.blocks.len() - compact.blocks.len();
    }
    Ok((
        worst <= 1e-5,
        format!("20 configs (x2 and x4, {skipped} skipped blocks, {dead} blocks dropped in total), max abs diff {worst:.1e} <= 1e-5"),
    ))
}

/// Corpus and settings shared by the search criteria.
struct Desk {
    speed: SpeedMLP<f32>,
    train: Vec<LrHrPair>,
}

fn search_cfg(seed: u64, v_t: f64) -> SearchConfig {
    SearchConfig {
        v_t,
        gamma: 0.01,
        patch_size: 12,
        seed,
        ..SearchConfig::default()
    }
}

fn supernet(seed: u64) -> Result<SupernetModel<f32>, String> {
    SupernetModel::new(SupernetConfig { seed, ..Default::default() }).map_err(e)
}

fn run(desk: &Desk, seed: u64, v_t: f64) -> Result<SearchState<f32>, String> {
    let cfg = search_cfg(seed, v_t);
    let mut st = SearchState::new(supernet(seed)?, &cfg);
    run_search(&mut st, &desk.speed, &desk.train, &cfg, |_| Ok(())).map_err(e)?;
    Ok(st)
}

fn active_channels(m: &SupernetModel<f32>) -> usize {
    m.blocks.iter().flat_map(|b| &b.block.convs).map(|c| c.mask.active()).sum()
}

fn search_effectiveness(desk: &Desk, kept: &mut Option<SearchState<f32>>) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in [1u64, 2, 3] {
        let init = supernet(seed)?;
        let v0 = init.predicted_latency(&desk.speed).map_err(e)? as f64;
        let v_t = 0.5 * v0;
        let st = run(desk, seed, v_t)?;
        let v_n = st.model.predicted_latency(&desk.speed).map_err(e)? as f64;
        let skipped = st.model.blocks.iter().filter(|b| !b.uses_block()).count();
        let (a0, a1) = (active_channels(&init), active_channels(&st.model));
        let pruned = 1.0 - a1 as f64 / a0 as f64;
        let ok = v_n <= 1.05 * v_t && (skipped >= 1 || pruned >= 0.25);
        pass &= ok;
        parts.push(format!(
            "seed {seed}: v_N {v_n:.2} vs 1.05*v_T {:.2}, {skipped} skipped, {:.0}% of initially active channels pruned",
            1.05 * v_t,
            100.0 * pruned
        ));
        if seed == 1 {
            *kept = Some(st);
        }
    }
    Ok((pass, parts.join("; ")))
}

fn depth_limits(desk: &Desk) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in [1u64, 2, 3] {
        let v0 = supernet(seed)?.predicted_latency(&desk.speed).map_err(e)? as f64;
        let low = run(desk, seed, 1e-4 * v0)?;
        let skipped = low.model.blocks.iter().filter(|b| !b.uses_block()).count();
        let high = run(desk, seed, 1e6)?;
        let kept = high.model.blocks.iter().filter(|b| b.uses_block()).count();
        let n = low.model.blocks.len();
        pass &= 2 * skipped >= n && kept == n;
        parts.push(format!("seed {seed}: v_T~0 skips {skipped}/{n}, v_T=1e6 keeps {kept}/{n}"));
    }
    Ok((pass, parts.join("; ")))
}

fn sr_quality(desk: &Desk, searched: &SearchState<f32>) -> Outcome {
    let cfg = search_cfg(1, 1.0);
    let compact = extract_architecture(&searched.model).map_err(e)?;
    // Validation and test images come from corpora disjoint from training.
    let mut val: Vec<PatchPair> = Vec::new();
    for (i, im) in synthetic_corpus(3, 64, 64, 555).map_err(e)?.iter().enumerate() {
        val.extend(sample_patches(im, 2, cfg.patch_size, 8, i as u64).map_err(e)?);
    }
    let out = finetune(&compact, &desk.train, &val, &cfg).map_err(e)?;
    let test: Vec<(String, LrHrPair)> = synthetic_corpus(6, 64, 64, 999)
        .map_err(e)?
        .iter()
        .enumerate()
        .map(|(i, im)| Ok((format!("t{i}"), LrHrPair::from_hr(im, 2).map_err(e)?)))
        .collect::<Result<_, String>>()?;
    let before = evaluate(&test, 2, |im| upscale(&compact, im)).map_err(e)?;
    let after = evaluate(&test, 2, |im| upscale(&out.model, im)).map_err(e)?;
    let gain = after.mean_psnr() - after.mean_bicubic_psnr();
    Ok((
        gain >= 0.3,
        format!(
            "held-out Y PSNR {:.3} dB (before fine-tune {:.3}) vs bicubic {:.3} dB: +{gain:.3} dB >= 0.3",
            after.mean_psnr(),
            before.mean_psnr(),
            after.mean_bicubic_psnr()
        ),
    ))
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut dp, mut ds) = (0.0f64, 0.0f64);
    for i in 0..20 {
        let (w, h) = (rng.gen_range(16..48), rng.gen_range(16..48));
        let a = common::noisy_image(w, h, i);
        let b = srnas::dataeval::bicubic_resize(&srnas::dataeval::bicubic_resize(&a, w / 2, h / 2).map_err(e)?, w, h)
            .map_err(e)?;
        let shave = i as usize % 4;
        dp = dp.max((psnr(&a, &b, shave).map_err(e)? - common::ref_psnr(&a, &b, shave)).abs());
        ds = ds.max((ssim(&a, &b).map_err(e)? - common::ref_ssim(&a, &b)).abs());
    }
    let sixteen = psnr_y(&[50.0; 100], &[66.0; 100]).map_err(e)?;
    let closed = 20.0 * (255.0f64 / 16.0).log10();
    let a = common::noisy_image(31, 29, 5);
    let self_ssim = ssim(&a, &a).map_err(e)?;
    Ok((
        dp <= 1e-9 && (sixteen - closed).abs() <= 1e-4 && self_ssim == 1.0 && ds <= 1e-6,
        format!(
            "psnr vs loop {dp:.1e} dB; 16-level {sixteen:.4} dB = 20*log10(255/16); ssim(a,a) = {self_ssim}; ssim vs direct window {ds:.1e}"
        ),
    ))
}

fn determinism() -> Outcome {
    let p = BuildParams {
        n: 300,
        seed: 9,
        ..Default::default()
    };
    let (a, b) = (build_dataset(&p).map_err(e)?, build_dataset(&p).map_err(e)?);
    let bench_same = a.to_csv_string() == b.to_csv_string();
    let scfg = SpeedTrainConfig {
        epochs: 60,
        seed: 9,
        ..Default::default()
    };
    let (m1, _) = train_speed_model::<f64>(&a, &scfg).map_err(e)?;
    let (m2, _) = train_speed_model::<f64>(&b, &scfg).map_err(e)?;
    let fit_same = prediction_table(&m1, &a).map_err(e)? == prediction_table(&m2, &b).map_err(e)? && m1.to_bytes() == m2.to_bytes();

    let speed = m1.cast::<f32>();
    let data: Vec<LrHrPair> = synthetic_corpus(4, 32, 32, 9)
        .map_err(e)?
        .iter()
        .map(|im| LrHrPair::from_hr(im, 2).map_err(e))
        .collect::<Result<_, _>>()?;
    let cfg = SearchConfig {
        v_t: 5.0,
        search_epochs: 3,
        patch_size: 8,
        patches_per_epoch: 32,
        seed: 9,
        ..Default::default()
    };
    let search = || -> Result<String, String> {
        let net = SupernetModel::<f32>::new(SupernetConfig { seed: 9, ..Default::default() }).map_err(e)?;
        let mut st = SearchState::new(net, &cfg);
        run_search(&mut st, &speed, &data, &cfg, |_| Ok(())).map_err(e)?;
        Ok(history_csv(&st.history))
    };
    let search_same = search()? == search()?;
    Ok((
        bench_same && fit_same && search_same,
        format!("byte-identical CSVs across two runs: bench {bench_same}, fit-speed {fit_same}, search history {search_same}"),
    ))
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, bool)> = Vec::new();
    let mut report = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let (ok, detail) = match f() {
            Ok(r) => r,
            Err(msg) => (false, format!("error: {msg}")),
        };
        println!(
            "criterion {n:>2} [{name}] {}: {detail} ({:.1}s)",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        results.push((n, name, ok));
    };

    report(1, "gradient oracle", &mut gradient_oracle);
    report(2, "STE contracts", &mut ste_contracts);
    report(3, "binarization and path tables", &mut binarization_tables);
    report(4, "hinge loss", &mut hinge_loss);
    let mut analytic = None;
    report(5, "speed-model accuracy", &mut || speed_accuracy(&mut analytic));
    report(6, "fusion correctness", &mut fusion);
    report(7, "supernet/compact equivalence", &mut compact_equivalence);

    let desk = analytic.map(|m| -> Result<Desk, String> {
        let train = synthetic_corpus(12, 64, 64, 11)
            .map_err(e)?
            .iter()
            .map(|im| LrHrPair::from_hr(im, 2).map_err(e))
            .collect::<Result<_, _>>()?;
        Ok(Desk { speed: m.cast(), train })
    });
    let desk = match desk {
        Some(Ok(d)) => Ok(d),
        Some(Err(err)) => Err(err),
        None => Err("no analytic speed model (criterion 5 errored)".to_string()),
    };
    let mut searched = None;
    report(8, "search effectiveness", &mut || search_effectiveness(desk.as_ref().map_err(Clone::clone)?, &mut searched));
    report(9, "depth-search limits", &mut || depth_limits(desk.as_ref().map_err(Clone::clone)?));
    report(10, "SR quality sanity", &mut || {
        let d = desk.as_ref().map_err(Clone::clone)?;
        sr_quality(d, searched.as_ref().ok_or("criterion 8 produced no searched model")?)
    });
    report(11, "metric oracles", &mut metric_oracles);
    report(12, "determinism", &mut determinism);

    let failed: Vec<_> = results.iter().filter(|r| !r.2).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
