use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::features::FeatureSet;

/// Polynomial-kernel settings and block subsampling for KID.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KidConfig {
    pub degree: u32,
    pub offset: f64,
    /// `None` means `1 / d`.
    pub scale: Option<f64>,
    /// `None` means `min(n_real, n_gen, 100)`.
    pub block_size: Option<usize>,
    pub num_blocks: usize,
}

impl Default for KidConfig {
    fn default() -> Self {
        KidConfig {
            degree: 3,
            offset: 1.0,
            scale: None,
            block_size: None,
            num_blocks: 10,
        }
    }
}

/// Polynomial kernel `(scale·⟨x, y⟩ + offset)^degree`.
#[derive(Clone, Copy, Debug)]
pub struct PolynomialKernel {
    pub degree: u32,
    pub offset: f64,
    pub scale: f64,
}

impl PolynomialKernel {
    #[inline]
    pub fn eval<T: Scalar>(&self, x: &[T], y: &[T]) -> T {
        let dot: T = x.iter().zip(y).map(|(&a, &b)| a * b).sum();
        (T::lit(self.scale) * dot + T::lit(self.offset)).powi(self.degree as i32)
    }
}

/// Running mean; exact when every value is equal.
#[derive(Clone, Copy)]
struct RunningMean<T> {
    mean: T,
    count: f64,
}

impl<T: Scalar> RunningMean<T> {
    fn new() -> Self {
        RunningMean {
            mean: T::zero(),
            count: 0.0,
        }
    }

    #[inline]
    fn push(&mut self, x: T) {
        self.count += 1.0;
        self.mean = self.mean + (x - self.mean) / T::lit(self.count);
    }
}

/// Unbiased squared MMD over the given row subsets.
///
/// Within-set averages skip the diagonal; the cross term uses every pair.
pub fn mmd2_unbiased<T: Scalar>(
    x: &FeatureSet<T>,
    xi: &[usize],
    y: &FeatureSet<T>,
    yi: &[usize],
    kernel: &PolynomialKernel,
) -> T {
    let within = |s: &FeatureSet<T>, idx: &[usize]| -> T {
        let mut acc = RunningMean::new();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                acc.push(kernel.eval(s.row(i), s.row(j)));
            }
        }
        acc.mean
    };
    let mut cross = RunningMean::new();
    for &i in xi {
        for &j in yi {
            cross.push(kernel.eval(x.row(i), y.row(j)));
        }
    }
    within(x, xi) + within(y, yi) - (cross.mean + cross.mean)
}

/// Per-block KID estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct KidEstimate<T> {
    pub mean: T,
    /// Population standard deviation across blocks.
    pub std: T,
    pub blocks: Vec<T>,
}

/// KID: unbiased MMD² averaged over `num_blocks` seeded subsets of `block_size` rows.
pub fn kid<T: Scalar>(
    real: &FeatureSet<T>,
    gen: &FeatureSet<T>,
    cfg: &KidConfig,
    seed: u64,
) -> Result<KidEstimate<T>> {
    real.check_comparable(gen)?;
    if cfg.degree < 1 {
        return Err(Error::Config("KID kernel degree must be at least 1".into()));
    }
    if cfg.num_blocks < 1 {
        return Err(Error::Config("KID needs at least one block".into()));
    }
    let (nr, ng) = (real.n(), gen.n());
    let block = cfg.block_size.unwrap_or_else(|| nr.min(ng).min(100));
    if block < 2 {
        return Err(Error::Config(format!("KID block size must be at least 2, got {block}")));
    }
    if block > nr.min(ng) {
        return Err(Error::Config(format!(
            "KID block size {block} exceeds the smaller set ({} rows)",
            nr.min(ng)
        )));
    }
    let kernel = PolynomialKernel {
        degree: cfg.degree,
        offset: cfg.offset,
        scale: cfg.scale.unwrap_or(1.0 / real.dim() as f64),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsets: Vec<(Vec<usize>, Vec<usize>)> = (0..cfg.num_blocks)
        .map(|_| {
            let mut a = index::sample(&mut rng, nr, block).into_vec();
            let mut b = index::sample(&mut rng, ng, block).into_vec();
            a.sort_unstable();
            b.sort_unstable();
            (a, b)
        })
        .collect();
    let blocks: Vec<T> = subsets
        .iter()
        .map(|(a, b)| mmd2_unbiased(real, a, gen, b, &kernel))
        .collect();
    let k = T::lit(blocks.len() as f64);
    let mean = blocks.iter().copied().sum::<T>() / k;
    let var = blocks.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / k;
    Ok(KidEstimate {
        mean,
        std: var.sqrt(),
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn set(rows: &[f64], d: usize) -> FeatureSet<f64> {
        FeatureSet::new(Tensor::new(vec![rows.len() / d, d], rows.to_vec()).unwrap(), "t").unwrap()
    }

    #[test]
    fn hand_case_is_seven() {
        let x = set(&[1.0, 1.0], 1);
        let y = set(&[0.0, 0.0], 1);
        let cfg = KidConfig {
            scale: Some(1.0),
            num_blocks: 1,
            ..Default::default()
        };
        let r = kid(&x, &y, &cfg, 0).unwrap();
        assert_eq!(r.mean, 7.0);
        assert_eq!(r.std, 0.0);
    }

    #[test]
    fn identical_constant_sets_are_zero() {
        let x = set(&[0.3; 12], 3);
        let r = kid(&x, &x.clone(), &KidConfig::default(), 5).unwrap();
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn oversized_block_rejected() {
        let x = set(&[0.0, 1.0, 2.0], 1);
        let cfg = KidConfig {
            block_size: Some(4),
            ..Default::default()
        };
        assert!(matches!(kid(&x, &x, &cfg, 0), Err(Error::Config(_))));
    }
}
