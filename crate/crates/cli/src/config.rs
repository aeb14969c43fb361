//! `RunConfig`: the TOML run file. Every key can also be set from the
//! command line with `--set section.key=value`.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use srnas::latlab::{AnalyticCoeffs, BuildParams, Fusion, LatencyMode, MeasureParams};
use srnas::nastrain::SearchConfig;
use srnas::speedmodel::SpeedTrainConfig;
use srnas::srnet::{BlockConfig, SkipInit, SupernetConfig};

use crate::CliError;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every stage derives its generator from it.
    pub seed: Option<u64>,
    pub bench: BenchSection,
    pub speed: SpeedSection,
    pub model: ModelSection,
    pub search: SearchSection,
    pub data: DataSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub mode: Option<String>,
    pub n: Option<usize>,
    pub spatial: Option<usize>,
    pub stack: Option<usize>,
    pub reps: Option<usize>,
    pub warmup: Option<usize>,
    pub fusion: Option<bool>,
    pub c0: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeedSection {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub split: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    /// Maximum accepted validation MAPE; defaults to 0.02 for analytic and
    /// 0.10 for measured datasets.
    pub gate: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_blocks: Option<usize>,
    pub trunk_width: Option<usize>,
    pub widths: Option<[usize; 3]>,
    pub kernels: Option<[usize; 3]>,
    pub scale: Option<usize>,
    pub thres: Option<f64>,
    pub v0: Option<f64>,
    pub skip_init: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub v_t: Option<f64>,
    /// Threshold as a fraction of the initial predicted latency; used when
    /// `v_t` is not given.
    pub v_t_fraction: Option<f64>,
    pub gamma: Option<f64>,
    pub search_epochs: Option<usize>,
    pub finetune_epochs: Option<usize>,
    pub lr: Option<f64>,
    pub mask_lr: Option<f64>,
    pub alpha_lr: Option<f64>,
    pub search_halve_epochs: Option<Vec<usize>>,
    pub finetune_halve_epochs: Option<Vec<usize>>,
    pub batch_size: Option<usize>,
    pub patch_size: Option<usize>,
    pub patches_per_epoch: Option<usize>,
    pub warmup_epochs: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Directory of HR training PNGs. Without it a procedural corpus is used.
    pub train_dir: Option<PathBuf>,
    /// Directory of HR validation PNGs for fine-tuning.
    pub val_dir: Option<PathBuf>,
    pub synthetic_images: Option<usize>,
    pub synthetic_size: Option<usize>,
    pub val_patches: Option<usize>,
}

fn parse_scalar(raw: &str) -> toml::Value {
    // Reuse the TOML grammar for the right-hand side; bare words are strings.
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides, and validates
    /// the keys.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override `{o}` is not key=value")))?;
            let parts: Vec<&str> = key.trim().split('.').collect();
            let mut t = &mut table;
            for sec in &parts[..parts.len() - 1] {
                t = t
                    .entry(sec.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| CliError::Usage(format!("`{sec}` is not a section")))?;
            }
            t.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw.trim()));
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid configuration: {e}")))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn build_params(&self) -> Result<BuildParams, CliError> {
        let b = &self.bench;
        let d = BuildParams::default();
        let m = MeasureParams::default();
        let c = AnalyticCoeffs::default();
        let mode = match &b.mode {
            Some(s) => s.parse::<LatencyMode>()?,
            None => d.mode,
        };
        let sp = b.spatial.unwrap_or(d.spatial.0);
        Ok(BuildParams {
            mode,
            n: b.n.unwrap_or(d.n),
            maxima: self.model_config()?.block.maxima(),
            spatial: (sp, sp),
            seed: self.seed.unwrap_or(d.seed),
            coeffs: AnalyticCoeffs {
                c0: b.c0.unwrap_or(c.c0),
                c1: b.c1.unwrap_or(c.c1),
                c2: b.c2.unwrap_or(c.c2),
            },
            measure: MeasureParams {
                stack: b.stack.unwrap_or(m.stack),
                reps: b.reps.unwrap_or(m.reps),
                warmup: b.warmup.unwrap_or(m.warmup),
                fusion: match b.fusion {
                    Some(false) => Fusion::Off,
                    Some(true) => Fusion::On,
                    None => m.fusion,
                },
                ..m
            },
        })
    }

    /// Speed-model training settings; unset keys fall back to the preset
    /// for the dataset's mode.
    pub fn speed_config(&self, mode: LatencyMode) -> SpeedTrainConfig {
        let s = &self.speed;
        let d = match mode {
            LatencyMode::Analytic => SpeedTrainConfig::default(),
            LatencyMode::Measured => SpeedTrainConfig::measured(),
        };
        SpeedTrainConfig {
            split: s.split.unwrap_or(d.split),
            epochs: s.epochs.unwrap_or(d.epochs),
            lr: s.lr.unwrap_or(d.lr),
            seed: self.seed(),
            hidden: s.hidden.clone().unwrap_or(d.hidden),
            batch_size: match s.batch_size {
                Some(0) => None,
                Some(b) => Some(b),
                None => d.batch_size,
            },
            cosine: d.cosine,
        }
    }

    pub fn model_config(&self) -> Result<SupernetConfig, CliError> {
        let m = &self.model;
        let d = SupernetConfig::default();
        let trunk = m.trunk_width.unwrap_or(d.block.trunk_width);
        let mut widths = m.widths.unwrap_or(d.block.widths);
        if m.widths.is_none() {
            widths[2] = trunk;
        }
        let cfg = SupernetConfig {
            block: BlockConfig {
                trunk_width: trunk,
                widths,
                kernels: m.kernels.unwrap_or(d.block.kernels),
            },
            n_blocks: m.n_blocks.unwrap_or(d.n_blocks),
            scale: m.scale.unwrap_or(d.scale),
            thres: m.thres.unwrap_or(d.thres),
            v0: m.v0.unwrap_or(d.v0),
            skip_init: match m.skip_init.as_deref() {
                None | Some("bicubic") => SkipInit::Bicubic,
                Some("random") => SkipInit::Random,
                Some(other) => return Err(CliError::Usage(format!("unknown skip_init `{other}`"))),
            },
            seed: self.seed(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Search settings; `v_t` is left at its default when only a fraction
    /// is configured and is resolved once the initial latency is known.
    pub fn search_config(&self) -> Result<SearchConfig, CliError> {
        let s = &self.search;
        let d = SearchConfig::default();
        let cfg = SearchConfig {
            v_t: s.v_t.unwrap_or(d.v_t),
            gamma: s.gamma.unwrap_or(d.gamma),
            search_epochs: s.search_epochs.unwrap_or(d.search_epochs),
            finetune_epochs: s.finetune_epochs.unwrap_or(d.finetune_epochs),
            lr: s.lr.unwrap_or(d.lr),
            mask_lr: s.mask_lr.or(d.mask_lr),
            alpha_lr: s.alpha_lr.or(d.alpha_lr),
            search_halve_epochs: s.search_halve_epochs.clone().unwrap_or(d.search_halve_epochs),
            finetune_halve_epochs: s.finetune_halve_epochs.clone().unwrap_or(d.finetune_halve_epochs),
            adam: d.adam,
            batch_size: s.batch_size.unwrap_or(d.batch_size),
            patch_size: s.patch_size.unwrap_or(d.patch_size),
            patches_per_epoch: s.patches_per_epoch.unwrap_or(d.patches_per_epoch),
            warmup_epochs: s.warmup_epochs.unwrap_or(d.warmup_epochs),
            seed: self.seed(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
