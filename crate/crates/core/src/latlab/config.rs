use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Number of conv layers in a block.
pub const BLOCK_CONVS: usize = 3;
/// Entries in a width vector.
pub const WIDTH_ARITY: usize = BLOCK_CONVS + 1;
/// Kernel sizes of the three block convs.
pub const BLOCK_KERNELS: [usize; BLOCK_CONVS] = [1, 1, 3];

/// Block widths `f = (f1, f2, f3, f4)`: block input channels, conv-1 and
/// conv-2 outputs, conv-3 outputs. `spatial` is the benchmark feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WidthConfig {
    pub f: [usize; BLOCK_CONVS + 1],
    pub spatial: (usize, usize),
}

impl WidthConfig {
    pub fn new(f: [usize; BLOCK_CONVS + 1], spatial: (usize, usize)) -> Result<Self> {
        let c = Self { f, spatial };
        c.validate(None)?;
        Ok(c)
    }

    pub fn validate(&self, maxima: Option<&[usize; BLOCK_CONVS + 1]>) -> Result<()> {
        if self.f.iter().any(|&v| v == 0) || self.spatial.0 == 0 || self.spatial.1 == 0 {
            return Err(Error::InvalidArgument(format!("widths and spatial size must be >= 1: {self:?}")));
        }
        if let Some(max) = maxima {
            if let Some(i) = (0..=BLOCK_CONVS).find(|&i| self.f[i] > max[i]) {
                return Err(Error::InvalidArgument(format!(
                    "f{} = {} exceeds cap {}",
                    i + 1,
                    self.f[i],
                    max[i]
                )));
            }
        }
        Ok(())
    }

    /// Multiply-accumulates of one block execution.
    pub fn macs(&self) -> u64 {
        let hw = (self.spatial.0 * self.spatial.1) as u64;
        (0..BLOCK_CONVS)
            .map(|l| (self.f[l] * self.f[l + 1] * BLOCK_KERNELS[l] * BLOCK_KERNELS[l]) as u64 * hw)
            .sum()
    }

    /// Feature elements written by the three convs.
    pub fn elements_moved(&self) -> u64 {
        let hw = (self.spatial.0 * self.spatial.1) as u64;
        (1..=BLOCK_CONVS).map(|l| self.f[l] as u64 * hw).sum()
    }

    /// Componentwise `self ≤ other`, same spatial size.
    pub fn nested_in(&self, other: &Self) -> bool {
        self.spatial == other.spatial && self.f.iter().zip(&other.f).all(|(a, b)| a <= b)
    }
}

/// `n` configs with each `f_i` uniform over `1..=maxima[i]`.
pub fn sample_configs(
    n: usize,
    maxima: &[usize; BLOCK_CONVS + 1],
    spatial: (usize, usize),
    seed: u64,
) -> Result<Vec<WidthConfig>> {
    if maxima.iter().any(|&m| m == 0) {
        return Err(Error::InvalidArgument("width caps must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| WidthConfig {
            f: std::array::from_fn(|i| rng.gen_range(1..=maxima[i])),
            spatial,
        })
        .collect())
}

/// Like [`sample_configs`] but skips configurations already drawn.
pub fn sample_unique_configs(
    n: usize,
    maxima: &[usize; BLOCK_CONVS + 1],
    spatial: (usize, usize),
    seed: u64,
) -> Result<Vec<WidthConfig>> {
    let space: usize = maxima.iter().product();
    if n > space {
        return Err(Error::InvalidArgument(format!("{n} unique configs requested from a space of {space}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let c = WidthConfig {
            f: std::array::from_fn(|i| rng.gen_range(1..=maxima[i])),
            spatial,
        };
        if seen.insert(c.f) {
            out.push(c);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_bounded_and_seeded() {
        let caps = [16, 64, 48, 16];
        assert!(sample_configs(0, &caps, (8, 8), 7).unwrap().is_empty());
        let a = sample_configs(2048, &caps, (48, 48), 7).unwrap();
        assert_eq!(a.len(), 2048);
        assert!(a.iter().all(|c| c.validate(Some(&caps)).is_ok()));
        assert_eq!(a, sample_configs(2048, &caps, (48, 48), 7).unwrap());
        assert_ne!(a, sample_configs(2048, &caps, (48, 48), 8).unwrap());
        // every value of the narrowest range shows up
        for v in 1..=16 {
            assert!(a.iter().any(|c| c.f[0] == v));
        }
    }

    #[test]
    fn unique_sampling_exhausts_small_spaces() {
        let all = sample_unique_configs(16, &[2, 2, 2, 2], (1, 1), 0).unwrap();
        let set: std::collections::HashSet<_> = all.iter().map(|c| c.f).collect();
        assert_eq!(set.len(), 16);
        assert!(sample_unique_configs(17, &[2, 2, 2, 2], (1, 1), 0).is_err());
    }

    #[test]
    fn counts() {
        let c = WidthConfig::new([16, 64, 48, 16], (48, 48)).unwrap();
        assert_eq!(c.macs(), 11008 * 2304);
        assert_eq!(c.elements_moved(), 128 * 2304);
        assert!(WidthConfig::new([0, 1, 1, 1], (1, 1)).is_err());
    }
}
