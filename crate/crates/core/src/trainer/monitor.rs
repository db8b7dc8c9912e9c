use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::metrics::{extract_features, fid_from_features, Extractor, FeatureSet, LinalgScalar};
use crate::model::{sample_latent, Generator};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Anything that can produce the `index`-th image of a reproducible sample.
pub trait ImageSource<T: Scalar>: Sync {
    fn image(&self, index: u64) -> Result<Tensor<T>>;
}

/// The `index`-th image for `seed`: independent of how many images are drawn
/// and in which order.
pub fn sample_image<T: Scalar>(generator: &Generator<T>, seed: u64, index: u64) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let z = sample_latent(generator.config.dim_z, &mut rng);
    let noise_seed = rng.next_u64();
    generator.forward(&z, noise_seed)
}

pub struct GeneratorSource<'a, T: Scalar> {
    generator: &'a Generator<T>,
    seed: u64,
}

impl<'a, T: Scalar> GeneratorSource<'a, T> {
    pub fn new(generator: &'a Generator<T>, seed: u64) -> Self {
        GeneratorSource { generator, seed }
    }
}

impl<T: Scalar> ImageSource<T> for GeneratorSource<'_, T> {
    fn image(&self, index: u64) -> Result<Tensor<T>> {
        sample_image(self.generator, self.seed, index)
    }
}

/// FID between `real` and the first `count` images of `source`.
pub fn monitor_fid<T: LinalgScalar>(
    source: &dyn ImageSource<T>,
    real: &FeatureSet<T>,
    extractor: Extractor,
    count: usize,
) -> Result<f64> {
    let images: Vec<Tensor<T>> = (0..count as u64)
        .into_par_iter()
        .map(|i| source.image(i))
        .collect::<Result<_>>()?;
    let gen = extract_features(&images, extractor)?;
    Ok(fid_from_features(real, &gen)?.as_f64())
}

/// True once the best of the last `patience` entries fails to beat the best
/// earlier entry by a positive margin of at least `min_delta`. Never fires
/// before the history holds more than `patience` entries.
pub fn stop_rule(history: &[f64], patience: usize, min_delta: f64) -> bool {
    if patience == 0 || history.len() <= patience {
        return false;
    }
    let (before, recent) = history.split_at(history.len() - patience);
    let best = |xs: &[f64]| xs.iter().copied().fold(f64::INFINITY, f64::min);
    let gain = best(before) - best(recent);
    !(gain > 0.0 && gain >= min_delta)
}
