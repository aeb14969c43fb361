//! Latency dataset: `f1,f2,f3,f4,t_ms` CSV plus a `key=value` `.meta` sidecar.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::{sample_unique_configs, WidthConfig, WIDTH_ARITY};
use super::exec::Fusion;
use super::measure::{analytic_latency, measure_latencies, AnalyticCoeffs, MeasureParams};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "f1,f2,f3,f4,t_ms";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatencyMode {
    Measured,
    Analytic,
}

impl LatencyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LatencyMode::Measured => "measured",
            LatencyMode::Analytic => "analytic",
        }
    }
}

impl std::str::FromStr for LatencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "measured" => Ok(LatencyMode::Measured),
            "analytic" => Ok(LatencyMode::Analytic),
            other => Err(Error::InvalidArgument(format!("unknown latency mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyRecord {
    pub config: WidthConfig,
    pub t_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub mode: LatencyMode,
    pub seed: u64,
    pub spatial: (usize, usize),
    pub maxima: [usize; WIDTH_ARITY],
    pub stack: usize,
    pub reps: usize,
    pub warmup: usize,
    pub fusion: Fusion,
    pub coeffs: AnalyticCoeffs,
    pub host: String,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        let m = MeasureParams::default();
        Self {
            mode: LatencyMode::Analytic,
            seed: 0,
            spatial: (48, 48),
            maxima: [16, 64, 48, 16],
            stack: m.stack,
            reps: m.reps,
            warmup: m.warmup,
            fusion: m.fusion,
            coeffs: AnalyticCoeffs::default(),
            host: host_description(),
        }
    }
}

pub fn host_description() -> String {
    format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyDataset {
    pub records: Vec<LatencyRecord>,
    pub meta: DatasetMeta,
}

#[derive(Clone, Debug)]
pub struct BuildParams {
    pub mode: LatencyMode,
    pub n: usize,
    pub maxima: [usize; WIDTH_ARITY],
    pub spatial: (usize, usize),
    pub seed: u64,
    pub coeffs: AnalyticCoeffs,
    pub measure: MeasureParams,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            mode: LatencyMode::Analytic,
            n: 2048,
            maxima: [16, 64, 48, 16],
            spatial: (48, 48),
            seed: 7,
            coeffs: AnalyticCoeffs::default(),
            measure: MeasureParams::default(),
        }
    }
}

pub fn build_dataset(p: &BuildParams) -> Result<LatencyDataset> {
    p.coeffs.validate()?;
    let configs = sample_unique_configs(p.n, &p.maxima, p.spatial, p.seed)?;
    let times = match p.mode {
        LatencyMode::Analytic => configs.iter().map(|c| analytic_latency(c, &p.coeffs)).collect::<Result<Vec<_>>>()?,
        LatencyMode::Measured => measure_latencies(&configs, &p.measure, p.seed)?,
    };
    let records = configs
        .iter()
        .zip(times)
        .map(|(c, t_ms)| LatencyRecord { config: *c, t_ms })
        .collect();
    Ok(LatencyDataset {
        records,
        meta: DatasetMeta {
            mode: p.mode,
            seed: p.seed,
            spatial: p.spatial,
            maxima: p.maxima,
            stack: p.measure.stack,
            reps: p.measure.reps,
            warmup: p.measure.warmup,
            fusion: p.measure.fusion,
            coeffs: p.coeffs,
            host: host_description(),
        },
    })
}

pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta")
}

impl LatencyDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV body; `f64` values use the shortest representation that parses
    /// back to the same bits.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::with_capacity(32 * (self.records.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let f = r.config.f;
            writeln!(s, "{},{},{},{},{}", f[0], f[1], f[2], f[3], r.t_ms).expect("string write");
        }
        s
    }

    pub fn meta_string(&self) -> String {
        let m = &self.meta;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            writeln!(s, "{k}={v}").expect("string write");
        };
        kv("mode", m.mode.as_str().into());
        kv("seed", m.seed.to_string());
        kv("spatial", format!("{}x{}", m.spatial.0, m.spatial.1));
        kv("maxima", m.maxima.map(|v| v.to_string()).join(","));
        kv("stack", m.stack.to_string());
        kv("reps", m.reps.to_string());
        kv("warmup", m.warmup.to_string());
        kv("fusion", if m.fusion == Fusion::On { "on" } else { "off" }.into());
        kv("coeffs", format!("{},{},{}", m.coeffs.c0, m.coeffs.c1, m.coeffs.c2));
        kv("host", m.host.clone());
        s
    }

    /// Writes `path` and its `.meta` sidecar.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))?;
        let mp = meta_path(path);
        std::fs::write(&mp, self.meta_string()).map_err(|e| Error::io(&mp, e))
    }

    /// Reads `path`; the sidecar is optional and defaults apply when absent.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mp = meta_path(path);
        let meta = match std::fs::read_to_string(&mp) {
            Ok(m) => parse_meta(&m, &mp.display().to_string())?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                log::warn!("{} not found; assuming default metadata", mp.display());
                DatasetMeta::default()
            }
            Err(e) => return Err(Error::io(&mp, e)),
        };
        let records = parse_csv(&text, &path.display().to_string(), meta.spatial)?;
        Ok(Self { records, meta })
    }

    /// Records as `(config, t_ms)` pairs.
    pub fn pairs(&self) -> Vec<(WidthConfig, f64)> {
        self.records.iter().map(|r| (r.config, r.t_ms)).collect()
    }
}

pub fn parse_csv(text: &str, source: &str, spatial: (usize, usize)) -> Result<Vec<LatencyRecord>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        Some((_, h)) => return Err(err(1, format!("expected header `{CSV_HEADER}`, found `{h}`"))),
        None => return Err(err(1, "empty file".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != WIDTH_ARITY + 1 {
            return Err(err(ln, format!("expected {} columns, found {}", WIDTH_ARITY + 1, cols.len())));
        }
        let mut f = [0usize; WIDTH_ARITY];
        for (k, v) in f.iter_mut().enumerate() {
            *v = cols[k]
                .parse()
                .map_err(|_| err(ln, format!("f{} is not a positive integer: `{}`", k + 1, cols[k])))?;
        }
        let t_ms: f64 = cols[WIDTH_ARITY]
            .parse()
            .map_err(|_| err(ln, format!("t_ms is not a number: `{}`", cols[WIDTH_ARITY])))?;
        if !(t_ms.is_finite() && t_ms > 0.0) {
            return Err(err(ln, format!("t_ms must be positive and finite, got {t_ms}")));
        }
        let config = WidthConfig::new(f, spatial).map_err(|e| err(ln, e.to_string()))?;
        out.push(LatencyRecord { config, t_ms });
    }
    Ok(out)
}

fn parse_meta(text: &str, source: &str) -> Result<DatasetMeta> {
    let mut m = DatasetMeta::default();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: ln,
            msg,
        };
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, found `{line}`")))?;
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| err(format!("bad number `{s}` for `{k}`")));
        match k.trim() {
            "mode" => m.mode = v.trim().parse().map_err(|e: Error| err(e.to_string()))?,
            "seed" => m.seed = v.trim().parse().map_err(|_| err(format!("bad seed `{v}`")))?,
            "spatial" => {
                let (h, w) = v.split_once('x').ok_or_else(|| err(format!("bad spatial `{v}`")))?;
                m.spatial = (num(h)?, num(w)?);
            }
            "maxima" => {
                let vals = v.split(',').map(num).collect::<Result<Vec<_>>>()?;
                m.maxima = vals.try_into().map_err(|_| err(format!("maxima needs {WIDTH_ARITY} values")))?;
            }
            "stack" => m.stack = num(v)?,
            "reps" => m.reps = num(v)?,
            "warmup" => m.warmup = num(v)?,
            "fusion" => {
                m.fusion = match v.trim() {
                    "on" => Fusion::On,
                    "off" => Fusion::Off,
                    o => return Err(err(format!("bad fusion `{o}`"))),
                }
            }
            "coeffs" => {
                let c = v
                    .split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|_| err(format!("bad coefficient `{s}`"))))
                    .collect::<Result<Vec<_>>>()?;
                if c.len() != 3 {
                    return Err(err("coeffs needs 3 values".into()));
                }
                m.coeffs = AnalyticCoeffs {
                    c0: c[0],
                    c1: c[1],
                    c2: c[2],
                };
            }
            "host" => m.host = v.trim().to_string(),
            other => return Err(err(format!("unknown key `{other}`"))),
        }
    }
    Ok(m)
}
