use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::WidthConfig;
use super::exec::{BenchBlock, Fusion};
use crate::diffcore::Tensor4;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasureParams {
    /// Blocks chained per timed run.
    pub stack: usize,
    pub reps: usize,
    pub warmup: usize,
    pub fusion: Fusion,
    /// Shortest acceptable median run before the timer is considered too coarse.
    pub min_run: Duration,
}

impl Default for MeasureParams {
    fn default() -> Self {
        Self {
            stack: 20,
            reps: 9,
            warmup: 3,
            fusion: Fusion::On,
            min_run: Duration::from_micros(50),
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn timed_stack(block: &BenchBlock<f32>, input: &Tensor4<f32>, stack: usize, fusion: Fusion) -> Result<f64> {
    let start = Instant::now();
    let mut x = block.execute(input, fusion)?;
    for _ in 1..stack {
        x = block.execute(&x, fusion)?;
    }
    let elapsed = start.elapsed();
    std::hint::black_box(&x);
    Ok(elapsed.as_secs_f64() * 1e3)
}

/// Per-block wall time in milliseconds: median over `reps` timed runs of
/// `stack` chained blocks, divided by `stack`.
///
/// Runs on the calling thread only. If the median run is shorter than
/// `min_run`, the stack is quadrupled and the measurement retried once.
pub fn measure_latency(config: &WidthConfig, params: &MeasureParams, seed: u64) -> Result<f64> {
    if params.warmup == 0 || params.reps == 0 || params.stack == 0 {
        return Err(Error::InvalidArgument("stack, reps and warmup must all be >= 1".into()));
    }
    let block = BenchBlock::<f32>::new(*config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let input = Tensor4::uniform([1, config.f[0], config.spatial.0, config.spatial.1], 0.0, 1.0, &mut rng);
    let mut stack = params.stack;
    for attempt in 0..2 {
        for _ in 0..params.warmup {
            timed_stack(&block, &input, stack, params.fusion)?;
        }
        let mut runs = (0..params.reps)
            .map(|_| timed_stack(&block, &input, stack, params.fusion))
            .collect::<Result<Vec<_>>>()?;
        let med = median(&mut runs);
        if med >= params.min_run.as_secs_f64() * 1e3 && med > 0.0 {
            return Ok(med / stack as f64);
        }
        if attempt == 0 {
            log::debug!("median run {med} ms below timer floor; retrying with stack {}", stack * 4);
            stack *= 4;
        }
    }
    Err(Error::TimerResolution(format!(
        "config {:?}: median run under {:?} even with stack {stack}",
        config.f, params.min_run
    )))
}

/// [`measure_latency`] for many configs at once, config `i` seeded with
/// `seed + i`. The reps are interleaved: pass `r` times every config once,
/// so a burst of host noise costs each config at most one of its samples
/// instead of its whole median window.
pub fn measure_latencies(configs: &[WidthConfig], params: &MeasureParams, seed: u64) -> Result<Vec<f64>> {
    if params.warmup == 0 || params.reps == 0 || params.stack == 0 {
        return Err(Error::InvalidArgument("stack, reps and warmup must all be >= 1".into()));
    }
    let floor = params.min_run.as_secs_f64() * 1e3;
    let mut jobs = Vec::with_capacity(configs.len());
    for (i, c) in configs.iter().enumerate() {
        let s = seed.wrapping_add(i as u64);
        let block = BenchBlock::<f32>::new(*c, s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x5eed);
        let input = Tensor4::uniform([1, c.f[0], c.spatial.0, c.spatial.1], 0.0, 1.0, &mut rng);
        let mut stack = params.stack;
        // A single noisy warmup can look slow, so size the stack with a 2x
        // margin over the floor rather than the floor itself.
        for round in 0..=3 {
            let mut warm = (0..params.warmup)
                .map(|_| timed_stack(&block, &input, stack, params.fusion))
                .collect::<Result<Vec<_>>>()?;
            if round == 3 || median(&mut warm) >= 2.0 * floor {
                break;
            }
            stack *= 4;
        }
        jobs.push((block, input, stack));
    }
    let mut runs = vec![Vec::with_capacity(params.reps); configs.len()];
    for _ in 0..params.reps {
        for ((block, input, stack), r) in jobs.iter().zip(&mut runs) {
            r.push(timed_stack(block, input, *stack, params.fusion)?);
        }
    }
    jobs.iter()
        .zip(&mut runs)
        .zip(configs)
        .map(|(((_, _, stack), r), c)| {
            let med = median(r);
            if med < floor || med <= 0.0 {
                return Err(Error::TimerResolution(format!(
                    "config {:?}: median run under {:?} even with stack {stack}",
                    c.f, params.min_run
                )));
            }
            Ok(med / *stack as f64)
        })
        .collect()
}

/// Analytic cost coefficients: fixed overhead, ms per million MACs, ms per
/// million feature elements written.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyticCoeffs {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for AnalyticCoeffs {
    fn default() -> Self {
        Self {
            c0: 0.05,
            c1: 2.0,
            c2: 0.1,
        }
    }
}

impl AnalyticCoeffs {
    pub fn validate(&self) -> Result<()> {
        let all = [self.c0, self.c1, self.c2];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) || all.iter().all(|&c| c == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "analytic coefficients must be finite, non-negative and not all zero: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `c0 + c1·MACs/1e6 + c2·elements/1e6`, with kernel sizes (1, 1, 3).
pub fn analytic_latency(config: &WidthConfig, coeffs: &AnalyticCoeffs) -> Result<f64> {
    coeffs.validate()?;
    config.validate(None)?;
    Ok(coeffs.c0 + coeffs.c1 * config.macs() as f64 / 1e6 + coeffs.c2 * config.elements_moved() as f64 / 1e6)
}

/// Least-squares fit of analytic coefficients to measured records
/// (normal equations on the three features, coefficients clipped at zero).
pub fn calibrate(records: &[(WidthConfig, f64)]) -> Result<AnalyticCoeffs> {
    if records.len() < 3 {
        return Err(Error::InvalidArgument("calibration needs at least 3 records".into()));
    }
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for (c, t) in records {
        let row = [1.0, c.macs() as f64 / 1e6, c.elements_moved() as f64 / 1e6];
        for i in 0..3 {
            atb[i] += row[i] * t;
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let x = solve3(ata, atb).ok_or_else(|| Error::InvalidArgument("calibration system is singular".into()))?;
    Ok(AnalyticCoeffs {
        c0: x[0].max(0.0),
        c1: x[1].max(0.0),
        c2: x[2].max(0.0),
    })
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for k in col..3 {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}
