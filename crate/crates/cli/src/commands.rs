use std::path::{Path, PathBuf};

use srnas::dataeval::{
    bicubic_resize, evaluate, list_pngs, load_png, sample_patches, save_png, synthetic_corpus, ImageRGB, LrHrPair,
    PatchPair,
};
use srnas::latlab::{build_dataset, LatencyDataset, LatencyMode};
use srnas::nastrain::{finetune as run_finetune, history_csv, run_search, upscale, warmup, SearchConfig, SearchState};
use srnas::speedmodel::{prediction_table, train_speed_model, SpeedMLP};
use srnas::srnet::{extract_architecture, CompactModel, SupernetModel};
use srnas::Error;

use crate::config::RunConfig;
use crate::{BenchArgs, CliError, CorpusArgs, EvalArgs, ExportArgs, FinetuneArgs, FitArgs, SearchArgs};

type Res = Result<(), CliError>;

const STATE_FILE: &str = "state.bin";
const RESOLVED_FILE: &str = "resolved.toml";

fn write(path: &Path, text: &str) -> Res {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

/// Fails early when the directory that will hold `path` does not exist.
fn check_parent(path: &Path) -> Res {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(CliError::Usage(format!("output directory {} does not exist", p.display())))
        }
        _ => Ok(()),
    }
}

fn ensure_dir(dir: &Path) -> Res {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_dir(dir: &Path) -> Result<Vec<(String, ImageRGB)>, CliError> {
    let files = list_pngs(dir)?;
    if files.is_empty() {
        return Err(CliError::Usage(format!("no PNG files in {}", dir.display())));
    }
    files
        .iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, load_png(p)?))
        })
        .collect()
}

/// Training pairs from `dir`, or a procedural corpus when no directory is set.
fn training_pairs(cfg: &RunConfig, dir: Option<&Path>, scale: usize, search: &SearchConfig) -> Result<Vec<LrHrPair>, CliError> {
    let images: Vec<ImageRGB> = match dir.or(cfg.data.train_dir.as_deref()) {
        Some(d) => load_dir(d)?.into_iter().map(|(_, im)| im).collect(),
        None => {
            let n = cfg.data.synthetic_images.unwrap_or(16);
            let size = cfg.data.synthetic_size.unwrap_or(2 * search.patch_size * scale);
            log::info!("no training directory; using {n} procedural {size}x{size} images");
            synthetic_corpus(n, size, size, cfg.seed())?
        }
    };
    let min = search.patch_size * scale;
    let pairs = images
        .iter()
        .map(|im| LrHrPair::from_hr(im, scale))
        .collect::<srnas::Result<Vec<_>>>()?;
    if let Some(p) = pairs.iter().find(|p| p.hr.width() < min || p.hr.height() < min) {
        return Err(CliError::Usage(format!(
            "training image {}x{} is smaller than the HR patch side {min}",
            p.hr.width(),
            p.hr.height()
        )));
    }
    Ok(pairs)
}

/// Validation patches for fine-tuning, drawn from a set disjoint from training.
fn validation_patches(cfg: &RunConfig, scale: usize, search: &SearchConfig) -> Result<Vec<PatchPair>, CliError> {
    let per_image = cfg.data.val_patches.unwrap_or(8);
    let images: Vec<ImageRGB> = match &cfg.data.val_dir {
        Some(d) => load_dir(d)?.into_iter().map(|(_, im)| im).collect(),
        None => {
            let size = cfg.data.synthetic_size.unwrap_or(2 * search.patch_size * scale);
            synthetic_corpus(4, size, size, cfg.seed() ^ 0x7661_6c69_6461_7465)?
        }
    };
    let mut out = Vec::new();
    for (i, im) in images.iter().enumerate() {
        out.extend(sample_patches(im, scale, search.patch_size, per_image, cfg.seed().wrapping_add(i as u64))?);
    }
    Ok(out)
}

pub fn bench(cfg: &RunConfig, a: &BenchArgs) -> Res {
    check_parent(&a.out)?;
    let mut p = cfg.build_params()?;
    if let Some(m) = &a.mode {
        p.mode = m.parse()?;
    }
    if let Some(n) = a.n {
        p.n = n;
    }
    let ds = build_dataset(&p)?;
    ds.save_csv(&a.out)?;
    let mut t: Vec<f64> = ds.records.iter().map(|r| r.t_ms).collect();
    t.sort_by(f64::total_cmp);
    println!(
        "{} {} records -> {}: min {:.4} ms, median {:.4} ms, max {:.4} ms",
        ds.len(),
        p.mode.as_str(),
        a.out.display(),
        t[0],
        t[t.len() / 2],
        t[t.len() - 1]
    );
    Ok(())
}

pub fn fit_speed(cfg: &RunConfig, a: &FitArgs) -> Res {
    check_parent(&a.out)?;
    let ds = LatencyDataset::load_csv(&a.dataset)?;
    let mut scfg = cfg.speed_config(ds.meta.mode);
    if let Some(e) = a.epochs {
        scfg.epochs = e;
    }
    let (model, report) = train_speed_model::<f64>(&ds, &scfg)?;
    model.save(&a.out)?;
    let reloaded = SpeedMLP::<f64>::load(&a.out)?;
    let table = prediction_table(&model, &ds)?;
    if prediction_table(&reloaded, &ds)? != table {
        return Err(CliError::Usage(format!("{} does not reproduce the trained model", a.out.display())));
    }
    write(&with_suffix(&a.out, ".fit.csv"), &table)?;
    println!(
        "train MAPE {:.4}, val MAPE {:.4} ({} / {} records) -> {}",
        report.train_mape,
        report.val_mape,
        report.train_len,
        report.val_len,
        a.out.display()
    );
    let gate = a.gate.or(cfg.speed.gate).unwrap_or(match ds.meta.mode {
        LatencyMode::Analytic => 0.02,
        LatencyMode::Measured => 0.10,
    });
    if report.val_mape > gate {
        return Err(CliError::Gate(format!("validation MAPE {:.4} exceeds {gate}", report.val_mape)));
    }
    Ok(())
}

fn read_resolved_vt(dir: &Path) -> Result<Option<f64>, CliError> {
    let path = dir.join(RESOLVED_FILE);
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(&path, e).into()),
    };
    let t: toml::Table = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(t.get("v_t").and_then(|v| v.as_float()))
}

pub fn search(cfg: &RunConfig, a: &SearchArgs) -> Res {
    ensure_dir(&a.out)?;
    let mcfg = cfg.model_config()?;
    let mut scfg = cfg.search_config()?;
    if let Some(e) = a.epochs {
        scfg.search_epochs = e;
    }
    let speed = SpeedMLP::<f32>::load(&a.speed)?;
    let state_path = a.out.join(STATE_FILE);
    let resuming = a.resume && state_path.exists();
    if a.resume && !resuming {
        log::warn!("{} not found; starting a fresh search", state_path.display());
    }

    let fresh = SupernetModel::<f32>::new(mcfg.clone())?;
    let v_init = fresh.predicted_latency(&speed)? as f64;
    let fraction = a.vt_fraction.or(cfg.search.v_t_fraction);
    let previous = if resuming { read_resolved_vt(&a.out)? } else { None };
    scfg.v_t = match (a.vt, previous, cfg.search.v_t, fraction) {
        (Some(v), ..) => v,
        (None, Some(v), ..) => v,
        (None, None, Some(v), _) => v,
        (None, None, None, Some(f)) => f * v_init,
        _ => scfg.v_t,
    };
    scfg.validate()?;
    write(
        &a.out.join(RESOLVED_FILE),
        &format!("v_t = {:?}\ninitial_latency_ms = {:?}\nseed = {}\n", scfg.v_t, v_init, scfg.seed),
    )?;
    println!("initial predicted latency {v_init:.3} ms, target {:.3} ms", scfg.v_t);

    let data = training_pairs(cfg, a.data.as_deref(), mcfg.scale, &scfg)?;
    let mut state = if resuming {
        let s = SearchState::<f32>::load(&state_path, &scfg)?;
        if s.model.config != mcfg {
            return Err(CliError::Usage("saved state was produced with a different model configuration".into()));
        }
        println!("resuming after epoch {}", s.epoch());
        s
    } else {
        let mut model = fresh;
        if scfg.warmup_epochs > 0 {
            warmup(&mut model, &speed, &data, &scfg, scfg.warmup_epochs)?;
        }
        SearchState::new(model, &scfg)
    };

    let history_path = a.out.join("history.csv");
    run_search(&mut state, &speed, &data, &scfg, |s| {
        s.save(&state_path)?;
        std::fs::write(&history_path, history_csv(&s.history)).map_err(|e| Error::io(&history_path, e))?;
        if let Some(h) = s.history.last() {
            println!(
                "epoch {:3}  l_sr {:.5}  l_spd {:.4}  v_n {:.3} ms  blocks {}",
                h.epoch,
                h.l_sr,
                h.l_spd,
                h.v_n,
                h.active_blocks()
            );
        }
        Ok(())
    })?;
    write(&history_path, &history_csv(&state.history))?;

    state.model.save(&a.out.join("supernet.bin"))?;
    let compact = extract_architecture(&state.model)?;
    compact.save(&a.out.join("compact.bin"))?;
    let summary = compact.summary(Some(&speed))?;
    write(&a.out.join("architecture.json"), &summary.to_json())?;
    println!(
        "kept {} of {} blocks, predicted {:.3} ms (target {:.3} ms) -> {}",
        summary.kept_blocks,
        compact.source_blocks,
        summary.predicted_v_n,
        scfg.v_t,
        a.out.display()
    );
    Ok(())
}

pub fn finetune(cfg: &RunConfig, a: &FinetuneArgs) -> Res {
    check_parent(&a.out)?;
    let mut scfg = cfg.search_config()?;
    if let Some(e) = a.epochs {
        scfg.finetune_epochs = e;
    }
    let compact = CompactModel::<f32>::load(&a.compact)?;
    let data = training_pairs(cfg, a.data.as_deref(), compact.scale, &scfg)?;
    let val = validation_patches(cfg, compact.scale, &scfg)?;
    let out = run_finetune(&compact, &data, &val, &scfg)?;
    out.model.save(&a.out)?;
    let mut csv = String::from("epoch,l_sr,val_psnr_db\n");
    for r in &out.history {
        csv.push_str(&format!("{},{},{}\n", r.epoch, r.l_sr, r.val_psnr));
    }
    write(&with_suffix(&a.out, ".history.csv"), &csv)?;
    match out.best_epoch {
        Some(e) => println!(
            "validation PSNR {:.3} -> {:.3} dB (best epoch {e}) -> {}",
            out.initial_psnr,
            out.best_psnr,
            a.out.display()
        ),
        None => println!(
            "validation PSNR {:.3} dB; no epoch improved on the starting weights -> {}",
            out.initial_psnr,
            a.out.display()
        ),
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, a: &EvalArgs) -> Res {
    if let Some(r) = &a.report {
        check_parent(r)?;
    }
    let model = match &a.model {
        Some(p) if !a.bicubic => Some(CompactModel::<f32>::load(p)?),
        _ => None,
    };
    let scale = match &model {
        Some(m) => m.scale,
        None => cfg.model_config()?.scale,
    };
    let hr = load_dir(&a.hr)?;
    let pairs: Vec<(String, LrHrPair)> = match &a.lr {
        None => hr
            .into_iter()
            .map(|(n, im)| Ok((n, LrHrPair::from_hr(&im, scale)?)))
            .collect::<srnas::Result<_>>()?,
        Some(dir) => {
            let mut out = Vec::with_capacity(hr.len());
            for (name, im) in hr {
                let path = dir.join(&name);
                if !path.exists() {
                    return Err(CliError::Usage(format!("no LR image {} for {name}", path.display())));
                }
                let lr = load_png(&path)?;
                if lr.width() * scale != im.width() || lr.height() * scale != im.height() {
                    return Err(CliError::Usage(format!(
                        "{name}: LR {}x{} times {scale} does not match HR {}x{}",
                        lr.width(),
                        lr.height(),
                        im.width(),
                        im.height()
                    )));
                }
                out.push((name, LrHrPair { lr, hr: im, scale }));
            }
            out
        }
    };
    let shave = a.shave.unwrap_or(scale);
    let report = match &model {
        Some(m) => evaluate(&pairs, shave, |im| upscale(m, im))?,
        None => evaluate(&pairs, shave, |im| bicubic_resize(im, im.width() * scale, im.height() * scale))?,
    };
    let csv = report.to_csv_string();
    match &a.report {
        Some(r) => write(r, &csv)?,
        None => print!("{csv}"),
    }
    println!(
        "mean PSNR {:.3} dB, SSIM {:.4} (bicubic {:.3} dB, {:.4}) over {} images",
        report.mean_psnr(),
        report.mean_ssim(),
        report.mean_bicubic_psnr(),
        report.mean_bicubic_ssim(),
        report.rows.len()
    );
    Ok(())
}

pub fn export(_cfg: &RunConfig, a: &ExportArgs) -> Res {
    ensure_dir(&a.out)?;
    let compact = CompactModel::<f32>::load(&a.compact)?;
    let speed = a.speed.as_deref().map(SpeedMLP::<f32>::load).transpose()?;
    compact.save(&a.out.join("model.bin"))?;
    let summary = compact.summary(speed.as_ref())?;
    write(&a.out.join("architecture.json"), &summary.to_json())?;
    println!(
        "{} blocks, {} parameters -> {}",
        summary.kept_blocks,
        summary.parameters,
        a.out.display()
    );
    Ok(())
}

pub fn corpus(cfg: &RunConfig, a: &CorpusArgs) -> Res {
    ensure_dir(&a.out)?;
    let images = synthetic_corpus(a.n, a.size, a.size, cfg.seed())?;
    for (i, im) in images.iter().enumerate() {
        save_png(im, &a.out.join(format!("img_{i:04}.png")))?;
    }
    println!("{} images of {}x{} -> {}", images.len(), a.size, a.size, a.out.display());
    Ok(())
}
