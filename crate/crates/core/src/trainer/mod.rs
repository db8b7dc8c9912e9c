//! Adversarial optimization: Adam updates, checkpoints, resume and FID monitoring.

mod adam;
mod checkpoint;
mod monitor;

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{AdamParams, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, resume, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use monitor::{monitor_fid, sample_image, stop_rule, GeneratorSource, ImageSource};

use crate::autodiff::Tape;
use crate::dataset::BatchSampler;
use crate::error::{Error, Result};
use crate::metrics::{Extractor, FeatureSet, LinalgScalar};
use crate::model::{sample_latent, Discriminator, Generator, ModelConfig, DEMOD_EPS};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Every knob of a training run. Serialized into checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub data_dir: Option<PathBuf>,
    pub resolution: usize,
    pub dim_z: usize,
    pub dim_w: usize,
    pub mapping_layers: usize,
    pub channel_base: usize,
    pub channel_max: usize,
    pub batch_size: usize,
    pub learning_rate_g: f64,
    pub learning_rate_d: f64,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub total_iterations: u64,
    pub checkpoint_interval: u64,
    pub keep_checkpoints: bool,
    pub fid_monitor_interval: u64,
    pub fid_monitor_samples: usize,
    pub extractor: String,
    pub seed: u64,
    pub augment_flip: bool,
    pub r1_gamma: f64,
    pub r1_interval: u64,
    /// 0 disables early stopping.
    pub stop_patience: usize,
    pub stop_min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        TrainConfig {
            data_dir: None,
            resolution: m.resolution,
            dim_z: m.dim_z,
            dim_w: m.dim_w,
            mapping_layers: m.mapping_layers,
            channel_base: m.channel_base,
            channel_max: m.channel_max,
            batch_size: 16,
            learning_rate_g: 2e-3,
            learning_rate_d: 2e-3,
            adam_betas: [0.0, 0.99],
            adam_eps: 1e-8,
            total_iterations: 2000,
            checkpoint_interval: 5,
            keep_checkpoints: false,
            fid_monitor_interval: 100,
            fid_monitor_samples: 200,
            extractor: "pool".into(),
            seed: 0,
            augment_flip: false,
            r1_gamma: 1.0,
            r1_interval: 16,
            stop_patience: 0,
            stop_min_delta: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.learning_rate_g > 0.0 && self.learning_rate_d > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.checkpoint_interval < 1 || self.fid_monitor_interval < 1 || self.r1_interval < 1 {
            return bad("intervals must be at least 1");
        }
        if self.fid_monitor_samples < 2 {
            return bad("fid_monitor_samples must be at least 2");
        }
        let [b1, b2] = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam_eps <= 0.0 || self.r1_gamma < 0.0 || self.stop_min_delta < 0.0 {
            return bad("adam_eps must be positive; r1_gamma and stop_min_delta non-negative");
        }
        self.extractor()?;
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            resolution: self.resolution,
            dim_z: self.dim_z,
            dim_w: self.dim_w,
            mapping_layers: self.mapping_layers,
            channel_base: self.channel_base,
            channel_max: self.channel_max,
            demod_eps: DEMOD_EPS,
        }
    }

    pub fn extractor(&self) -> Result<Extractor> {
        self.extractor.parse()
    }

    fn adam_g(&self) -> AdamParams {
        AdamParams {
            lr: self.learning_rate_g,
            beta1: self.adam_betas[0],
            beta2: self.adam_betas[1],
            eps: self.adam_eps,
        }
    }

    fn adam_d(&self) -> AdamParams {
        AdamParams {
            lr: self.learning_rate_d,
            ..self.adam_g()
        }
    }

    /// Seed for FID monitoring samples; independent of the training stream.
    pub fn monitor_seed(&self) -> u64 {
        self.seed ^ 0x4D4F_4E49_544F_5231
    }

    /// Seed for the data order; independent of the training stream.
    pub fn data_seed(&self) -> u64 {
        self.seed ^ 0x4441_5441_4F52_4445
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub loss_d: f64,
    pub loss_g: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidPoint {
    pub iteration: u64,
    pub fid: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T: Scalar> {
    pub iteration: u64,
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub adam_g: AdamState<T>,
    pub adam_d: AdamState<T>,
    /// Key of the stream used by the next step; replaced after every step.
    pub rng_key: [u64; 4],
    pub loss_history: Vec<LossRecord>,
    pub fid_history: Vec<FidPoint>,
}

fn key_to_seed(key: &[u64; 4]) -> [u8; 32] {
    let mut seed = [0u8; 32];
    for (chunk, k) in seed.chunks_exact_mut(8).zip(key) {
        chunk.copy_from_slice(&k.to_le_bytes());
    }
    seed
}

fn draw_key(rng: &mut impl RngCore) -> [u64; 4] {
    [rng.next_u64(), rng.next_u64(), rng.next_u64(), rng.next_u64()]
}

impl<T: Scalar> TrainState<T> {
    /// Fresh networks and optimizer state derived from `config.seed`.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mcfg = config.model_config();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut generator = Generator::init(&mcfg, &mut rng)?;
        let mut discriminator = Discriminator::init(&mcfg, &mut rng)?;
        round_params(generator.params.tensors_mut());
        round_params(discriminator.params.tensors_mut());
        let rng_key = draw_key(&mut rng);
        Ok(TrainState {
            iteration: 0,
            adam_g: AdamState::new(generator.params.tensors()),
            adam_d: AdamState::new(discriminator.params.tensors()),
            generator,
            discriminator,
            rng_key,
            loss_history: Vec::new(),
            fid_history: Vec::new(),
        })
    }

    /// Generates `config.fid_monitor_samples` images, scores them against
    /// `real` and appends the value to the FID history.
    pub fn monitor(&mut self, real: &FeatureSet<T>, config: &TrainConfig) -> Result<f64>
    where
        T: LinalgScalar,
    {
        let source = GeneratorSource::new(&self.generator, config.monitor_seed());
        let fid = monitor_fid(&source, real, config.extractor()?, config.fid_monitor_samples)?;
        self.fid_history.push(FidPoint {
            iteration: self.iteration,
            fid,
        });
        Ok(fid)
    }

    pub fn fid_values(&self) -> Vec<f64> {
        self.fid_history.iter().map(|p| p.fid).collect()
    }
}

fn round_params<T: Scalar>(tensors: &mut [Tensor<T>]) {
    for t in tensors {
        t.data_mut().iter_mut().for_each(|x| *x = x.storage_round());
    }
}

fn sum_in_order<T: Scalar>(parts: Vec<Vec<Tensor<T>>>) -> Vec<Tensor<T>> {
    let mut iter = parts.into_iter();
    let mut acc = iter.next().unwrap_or_default();
    for part in iter {
        for (a, p) in acc.iter_mut().zip(part) {
            for (x, y) in a.data_mut().iter_mut().zip(p.data()) {
                *x = *x + *y;
            }
        }
    }
    acc
}

fn all_finite<T: Scalar>(ts: &[Tensor<T>]) -> bool {
    ts.iter().all(Tensor::all_finite)
}

/// Discriminator loss gradient for one (real, fake) pair, pre-scaled by 1/B.
fn d_sample_grads<T: Scalar>(
    d: &Discriminator<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    inv_b: f64,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let bound = d.params.register(&mut tape, true);
    let xr = tape.constant(real.clone());
    let xf = tape.constant(fake.clone());
    let lr = d.graph(&mut tape, &bound, xr)?;
    let lf = d.graph(&mut tape, &bound, xf)?;
    let neg_r = tape.scale(lr, -1.0)?;
    let a = tape.softplus(lf)?;
    let b = tape.softplus(neg_r)?;
    let s = tape.add(a, b)?;
    let loss = tape.scale(s, inv_b)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).item()?.as_f64(), bound.collect_grads(&grads)?))
}

fn d_param_grads_of_logit<T: Scalar>(d: &Discriminator<T>, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let mut tape = Tape::new();
    let bound = d.params.register(&mut tape, true);
    let xi = tape.constant(x.clone());
    let logit = d.graph(&mut tape, &bound, xi)?;
    let grads = tape.backward(logit)?;
    bound.collect_grads(&grads)
}

/// R1 penalty and its parameter gradient for one real image, pre-scaled by 1/B.
///
/// `∇_θ ½‖∇_x D‖² = H_θx · ∇_x D`, evaluated as a central difference of
/// `∇_θ D` along the input-gradient direction.
fn r1_sample_grads<T: Scalar>(
    d: &Discriminator<T>,
    real: &Tensor<T>,
    gamma: f64,
    inv_b: f64,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let (_, gx) = d.forward_with_input_grad(real)?;
    let norm = gx.frobenius_norm().as_f64();
    let penalty = 0.5 * gamma * norm * norm * inv_b;
    if norm == 0.0 {
        return Ok((penalty, d.params.zeros_like().tensors().to_vec()));
    }
    const STEP: f64 = 1e-4;
    let dir = gx.map(|g| g / T::lit(norm));
    let shift = T::lit(STEP);
    let plus = real.zip_map(&dir, |x, u| x + shift * u)?;
    let minus = real.zip_map(&dir, |x, u| x - shift * u)?;
    let gp = d_param_grads_of_logit(d, &plus)?;
    let gm = d_param_grads_of_logit(d, &minus)?;
    let factor = T::lit(gamma * inv_b * norm / (2.0 * STEP));
    let grads = gp
        .into_iter()
        .zip(gm)
        .map(|(a, b)| a.zip_map(&b, |p, m| (p - m) * factor))
        .collect::<Result<_>>()?;
    Ok((penalty, grads))
}

fn g_sample_grads<T: Scalar>(
    g: &Generator<T>,
    d: &Discriminator<T>,
    z: &Tensor<T>,
    noise_seed: u64,
    inv_b: f64,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let gb = g.params.register(&mut tape, true);
    let db = d.params.register(&mut tape, false);
    let zn = tape.constant(z.clone());
    let img = g.graph(&mut tape, &gb, zn, noise_seed)?;
    let logit = d.graph(&mut tape, &db, img)?;
    let neg = tape.scale(logit, -1.0)?;
    let sp = tape.softplus(neg)?;
    let loss = tape.scale(sp, inv_b)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).item()?.as_f64(), gb.collect_grads(&grads)?))
}

/// One discriminator update on `batch` plus fresh fakes, then one generator
/// update on fresh fakes.
///
/// On divergence the state is left exactly as it was before the call.
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &[Tensor<T>],
    config: &TrainConfig,
) -> Result<LossRecord> {
    let r = config.resolution;
    if batch.len() < 2 || batch.iter().any(|x| x.shape() != [3, r, r]) {
        return Err(Error::Shape(format!(
            "batch must hold at least 2 images of shape 3x{r}x{r}"
        )));
    }
    let b = batch.len();
    let inv_b = 1.0 / b as f64;
    let mut rng = ChaCha8Rng::from_seed(key_to_seed(&state.rng_key));
    let dim_z = state.generator.config.dim_z;

    let d_inputs: Vec<(Tensor<T>, u64)> = (0..b)
        .map(|_| (sample_latent(dim_z, &mut rng), rng.next_u64()))
        .collect();
    let g_inputs: Vec<(Tensor<T>, u64)> = (0..b)
        .map(|_| (sample_latent(dim_z, &mut rng), rng.next_u64()))
        .collect();
    let next_key = draw_key(&mut rng);

    let gen = &state.generator;
    let fakes: Vec<Tensor<T>> = d_inputs
        .par_iter()
        .map(|(z, s)| gen.forward(z, *s))
        .collect::<Result<_>>()?;

    let disc = &state.discriminator;
    let d_parts: Vec<(f64, Vec<Tensor<T>>)> = batch
        .par_iter()
        .zip(fakes.par_iter())
        .map(|(x, f)| d_sample_grads(disc, x, f, inv_b))
        .collect::<Result<_>>()?;
    let mut loss_d: f64 = d_parts.iter().map(|p| p.0).sum();
    let mut d_grads = sum_in_order(d_parts.into_iter().map(|p| p.1).collect());

    if config.r1_gamma > 0.0 && state.iteration.is_multiple_of(config.r1_interval) {
        let parts: Vec<(f64, Vec<Tensor<T>>)> = batch
            .par_iter()
            .map(|x| r1_sample_grads(disc, x, config.r1_gamma, inv_b))
            .collect::<Result<_>>()?;
        loss_d += parts.iter().map(|p| p.0).sum::<f64>();
        let r1 = sum_in_order(parts.into_iter().map(|p| p.1).collect());
        for (a, p) in d_grads.iter_mut().zip(r1) {
            for (x, y) in a.data_mut().iter_mut().zip(p.data()) {
                *x = *x + *y;
            }
        }
    }

    let mut new_d = state.discriminator.clone();
    let mut adam_d = state.adam_d.clone();
    if loss_d.is_finite() && all_finite(&d_grads) {
        adam_d.update(new_d.params.tensors_mut(), &d_grads, &config.adam_d())?;
    }

    let new_d_ref = &new_d;
    let g_parts: Vec<(f64, Vec<Tensor<T>>)> = g_inputs
        .par_iter()
        .map(|(z, s)| g_sample_grads(gen, new_d_ref, z, *s, inv_b))
        .collect::<Result<_>>()?;
    let loss_g: f64 = g_parts.iter().map(|p| p.0).sum();
    let g_grads = sum_in_order(g_parts.into_iter().map(|p| p.1).collect());

    let finite = loss_d.is_finite()
        && loss_g.is_finite()
        && all_finite(&d_grads)
        && all_finite(&g_grads)
        && all_finite(new_d.params.tensors());
    if !finite {
        return Err(Error::Diverged {
            iteration: state.iteration,
            loss_d,
            loss_g,
        });
    }

    let mut new_g = state.generator.clone();
    let mut adam_g = state.adam_g.clone();
    adam_g.update(new_g.params.tensors_mut(), &g_grads, &config.adam_g())?;
    if !all_finite(new_g.params.tensors()) {
        return Err(Error::Diverged {
            iteration: state.iteration,
            loss_d,
            loss_g,
        });
    }

    round_params(new_d.params.tensors_mut());
    round_params(new_g.params.tensors_mut());
    adam_d.storage_round();
    adam_g.storage_round();

    let record = LossRecord { loss_d, loss_g };
    state.generator = new_g;
    state.discriminator = new_d;
    state.adam_g = adam_g;
    state.adam_d = adam_d;
    state.rng_key = next_key;
    state.iteration += 1;
    state.loss_history.push(record);
    Ok(record)
}

/// What happened during [`train`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainOutcome {
    pub stopped_early: bool,
    /// Iterations at which a checkpoint was written.
    pub checkpoints: Vec<u64>,
    /// Iterations at which writing a checkpoint failed.
    pub failed_checkpoints: Vec<u64>,
}

/// Where and how [`train`] persists and monitors.
#[derive(Debug, Default)]
pub struct TrainHooks<'a, T: Scalar> {
    pub checkpoint_dir: Option<&'a Path>,
    pub real_features: Option<&'a FeatureSet<T>>,
}

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("checkpoint.bin")
}

/// Runs [`train_step`] until `state.iteration == until` (capped at
/// `total_iterations`), checkpointing every `checkpoint_interval` iterations
/// and monitoring FID every `fid_monitor_interval` iterations.
pub fn train<T: LinalgScalar>(
    state: &mut TrainState<T>,
    sampler: &BatchSampler<T>,
    config: &TrainConfig,
    until: u64,
    hooks: &TrainHooks<'_, T>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let until = until.min(config.total_iterations);
    let mut outcome = TrainOutcome::default();
    let monitored_at = |s: &TrainState<T>| s.fid_history.last().map(|p| p.iteration) == Some(s.iteration);

    while state.iteration < until {
        if let Some(real) = hooks.real_features {
            if state.iteration.is_multiple_of(config.fid_monitor_interval) && !monitored_at(state) {
                let fid = state.monitor(real, config)?;
                log::info!("iteration {}: FID {fid:.4}", state.iteration);
                if config.stop_patience > 0
                    && stop_rule(&state.fid_values(), config.stop_patience, config.stop_min_delta)
                {
                    outcome.stopped_early = true;
                    return Ok(outcome);
                }
            }
        }
        let batch = sampler.batch_images(state.iteration);
        let losses = train_step(state, &batch, config)?;
        log::debug!(
            "iteration {}: loss_d {:.5} loss_g {:.5}",
            state.iteration,
            losses.loss_d,
            losses.loss_g
        );
        if state.iteration.is_multiple_of(config.checkpoint_interval) {
            if let Some(dir) = hooks.checkpoint_dir {
                let mut result = save_checkpoint(state, config, &checkpoint_path(dir));
                if result.is_ok() && config.keep_checkpoints {
                    let numbered = dir.join(format!("checkpoint-{:08}.bin", state.iteration));
                    result = save_checkpoint(state, config, &numbered);
                }
                match result {
                    Ok(()) => outcome.checkpoints.push(state.iteration),
                    Err(e) => {
                        log::warn!("checkpoint at iteration {} failed: {e}", state.iteration);
                        outcome.failed_checkpoints.push(state.iteration);
                    }
                }
            }
        }
    }
    if let Some(real) = hooks.real_features {
        if state.iteration == config.total_iterations && !monitored_at(state) {
            let fid = state.monitor(real, config)?;
            log::info!("iteration {}: FID {fid:.4}", state.iteration);
        }
    }
    Ok(outcome)
}
