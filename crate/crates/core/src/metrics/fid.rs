use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::features::FeatureSet;
use super::linalg::{sqrtm_spd, symmetrize, trace, LinalgScalar};

/// Gaussian fit (mean, covariance) of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats<T: Scalar> {
    pub mu: Tensor<T>,
    pub sigma: Tensor<T>,
}

impl<T: Scalar> GaussianStats<T> {
    pub fn dim(&self) -> usize {
        self.mu.numel()
    }
}

/// Column mean and sample covariance (denominator n − 1).
pub fn gaussian_stats<T: Scalar>(features: &FeatureSet<T>) -> Result<GaussianStats<T>> {
    let (n, d) = (features.n(), features.dim());
    if n < 2 {
        return Err(Error::InsufficientSamples(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    let nf = T::lit(n as f64);
    let mut mu = vec![T::zero(); d];
    for i in 0..n {
        for (m, &x) in mu.iter_mut().zip(features.row(i)) {
            *m = *m + x;
        }
    }
    mu.iter_mut().for_each(|m| *m = *m / nf);

    let mut sigma = vec![T::zero(); d * d];
    let mut centered = vec![T::zero(); d];
    for i in 0..n {
        for ((c, &x), &m) in centered.iter_mut().zip(features.row(i)).zip(&mu) {
            *c = x - m;
        }
        for a in 0..d {
            let ca = centered[a];
            if ca == T::zero() {
                continue;
            }
            let row = &mut sigma[a * d..(a + 1) * d];
            for (s, &cb) in row.iter_mut().zip(&centered).skip(a) {
                *s = *s + ca * cb;
            }
        }
    }
    let denom = T::lit((n - 1) as f64);
    for a in 0..d {
        for b in a..d {
            let v = sigma[a * d + b] / denom;
            sigma[a * d + b] = v;
            sigma[b * d + a] = v;
        }
    }
    Ok(GaussianStats {
        mu: Tensor::new(vec![d], mu)?,
        sigma: Tensor::new(vec![d, d], sigma)?,
    })
}

/// Values in `[FID_FLOOR, 0)` are rounding noise and reported as zero.
pub const FID_FLOOR: f64 = -1e-8;

/// Fréchet distance `‖μ_r − μ_g‖² + tr(Σ_r + Σ_g − 2·(Σ_r Σ_g)^{1/2})`.
///
/// The trace of the square root is taken on the symmetric similar matrix
/// `Σ_r^{1/2} Σ_g Σ_r^{1/2}`, which has the same eigenvalues as `Σ_r Σ_g`.
pub fn fid<T: LinalgScalar>(real: &GaussianStats<T>, gen: &GaussianStats<T>) -> Result<T> {
    let d = real.dim();
    if gen.dim() != d || real.sigma.shape() != [d, d] || gen.sigma.shape() != [d, d] {
        return Err(Error::Shape(format!(
            "statistics dimensions differ: {} vs {}",
            d,
            gen.dim()
        )));
    }
    let mean_term: T = real
        .mu
        .data()
        .iter()
        .zip(gen.mu.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    let root_r = sqrtm_spd(&real.sigma)?;
    let inner = root_r.matmul(&gen.sigma)?.matmul(&root_r)?;
    let cross = sqrtm_spd(&symmetrize(&inner)?)?;
    let two = <T as Scalar>::lit(2.0);
    let value = mean_term + trace(&real.sigma)? + trace(&gen.sigma)? - two * trace(&cross)?;
    let v = value.as_f64();
    if !Float::is_finite(value) {
        return Err(Error::Numeric("FID is not finite".into()));
    }
    if v < FID_FLOOR {
        return Err(Error::Numeric(format!("FID {v:e} below the numerical floor")));
    }
    Ok(if v < 0.0 { T::zero() } else { value })
}

/// FID between two feature sets from the same extractor.
pub fn fid_from_features<T: LinalgScalar>(real: &FeatureSet<T>, gen: &FeatureSet<T>) -> Result<T> {
    real.check_comparable(gen)?;
    fid(&gaussian_stats(real)?, &gaussian_stats(gen)?)
}
