use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{NodeId, Tape, LEAKY_RELU_SLOPE};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::params::{BoundParams, ParamSet};
use super::{ModelConfig, StyleVector, ACTIVATION_GAIN, RMS_NORM_EPS};

/// Mapping network plus weight-demodulated synthesis network.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Generator<T> {
    /// Standard-normal weights (scaled at run time by 1/sqrt(fan_in)),
    /// zero biases, unit style bias, zero noise strength.
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut p = ParamSet::new();
        for i in 0..config.mapping_layers {
            let fan_in = if i == 0 { config.dim_z } else { config.dim_w };
            p.insert_normal(format!("map{i}.weight"), &[fan_in, config.dim_w], rng)?;
            p.insert(format!("map{i}.bias"), Tensor::zeros(&[1, config.dim_w]))?;
        }
        p.insert_normal("const", &[1, config.channels(4), 4, 4], rng)?;
        for b in 0..config.synthesis_blocks() {
            let (cin, cout) = config.block_channels(b);
            p.insert_normal(format!("b{b}.affine.weight"), &[config.dim_w, cin], rng)?;
            p.insert(format!("b{b}.affine.bias"), Tensor::ones(&[1, cin]))?;
            p.insert_normal(format!("b{b}.conv.weight"), &[cout, cin, 3, 3], rng)?;
            p.insert(format!("b{b}.noise_strength"), Tensor::zeros(&[]))?;
            p.insert(format!("b{b}.bias"), Tensor::zeros(&[cout]))?;
        }
        let last = config.channels(config.resolution);
        p.insert_normal("torgb.weight", &[3, last, 1, 1], rng)?;
        p.insert("torgb.bias", Tensor::zeros(&[3]))?;
        Ok(Generator { config: config.clone(), params: p })
    }

    /// A generator with every parameter set to zero except the learned constant.
    pub fn zeroed_except_const(&self) -> Self {
        let mut g = self.clone();
        for (name, t) in self.params.iter() {
            if name != "const" {
                *g.params.get_mut(name).expect("own parameter") = Tensor::zeros(t.shape());
            }
        }
        g
    }

    /// Latent code to style vector.
    pub fn map(&self, z: &Tensor<T>) -> Result<StyleVector<T>> {
        let mut tape = Tape::new();
        let bound = self.params.register(&mut tape, false);
        let zn = tape.constant(z.clone());
        let w = mapping_graph(&mut tape, &self.config, &bound, zn)?;
        Ok(StyleVector(tape.value(w).reshape(&[self.config.dim_w])?))
    }

    /// Synthesizes one 3×R×R image. Noise maps are drawn from `noise_seed`.
    pub fn forward(&self, z: &Tensor<T>, noise_seed: u64) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.register(&mut tape, false);
        let zn = tape.constant(z.clone());
        let img = synthesis_graph(&mut tape, &self.config, &bound, zn, noise_seed)?;
        Ok(tape.value(img).clone())
    }

    /// Records the full generator on `tape` and returns the 3×R×R image node.
    pub fn graph(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams<'_, T>,
        z: NodeId,
        noise_seed: u64,
    ) -> Result<NodeId> {
        synthesis_graph(tape, &self.config, bound, z, noise_seed)
    }
}

/// Draws a latent code from the standard normal.
pub fn sample_latent<T: Scalar>(dim_z: usize, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(&[dim_z], |_| T::lit(rng.sample::<f64, _>(StandardNormal)))
}

fn dense<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams<'_, T>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let w = bound.node(&format!("{prefix}.weight"))?;
    let fan_in = tape.value(w).shape()[0];
    let ws = tape.scale(w, 1.0 / (fan_in as f64).sqrt())?;
    let h = tape.matmul(x, ws)?;
    let b = bound.node(&format!("{prefix}.bias"))?;
    tape.add(h, b)
}

/// RMS-normalizes z and runs the mapping MLP; returns a 1×dim_w node.
pub(crate) fn mapping_graph<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    bound: &BoundParams<'_, T>,
    z: NodeId,
) -> Result<NodeId> {
    let zshape = tape.value(z).shape().to_vec();
    if tape.value(z).numel() != cfg.dim_z {
        return shape_err(format!(
            "latent has shape {zshape:?}, generator expects {} values",
            cfg.dim_z
        ));
    }
    let z = tape.reshape(z, &[1, cfg.dim_z])?;
    let sq = tape.square(z)?;
    let ms = tape.mean(sq)?;
    let eps = tape.constant(Tensor::scalar(T::lit(RMS_NORM_EPS)));
    let ms = tape.add(ms, eps)?;
    let inv = tape.rsqrt(ms)?;
    let mut x = tape.mul(z, inv)?;
    for i in 0..cfg.mapping_layers {
        let h = dense(tape, bound, &format!("map{i}"), x)?;
        x = tape.leaky_relu(h, LEAKY_RELU_SLOPE)?;
    }
    Ok(x)
}

fn synthesis_graph<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    bound: &BoundParams<'_, T>,
    z: NodeId,
    noise_seed: u64,
) -> Result<NodeId> {
    let w = mapping_graph(tape, cfg, bound, z)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut x = bound.node("const")?;
    let blocks = cfg.synthesis_blocks();
    for b in 0..blocks {
        let res = 4usize << b;
        let (cin, cout) = cfg.block_channels(b);
        let style = dense(tape, bound, &format!("b{b}.affine"), w)?;
        let style = tape.reshape(style, &[cin])?;
        let kernel = bound.node(&format!("b{b}.conv.weight"))?;
        let kernel = tape.demodulate(kernel, style, cfg.demod_eps)?;
        x = tape.conv2d(x, kernel, 1, 1)?;

        let map: Vec<T> = (0..res * res)
            .map(|_| T::lit(noise_rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let noise = Tensor::from_fn(&[1, cout, res, res], |i| map[i % (res * res)]);
        let noise = tape.constant(noise);
        let strength = bound.node(&format!("b{b}.noise_strength"))?;
        let noise = tape.mul(noise, strength)?;
        x = tape.add(x, noise)?;

        let bias = bound.node(&format!("b{b}.bias"))?;
        x = tape.channel_bias(x, bias)?;
        x = tape.leaky_relu(x, LEAKY_RELU_SLOPE)?;
        x = tape.scale(x, ACTIVATION_GAIN)?;
        if b + 1 < blocks {
            x = tape.upsample2x(x)?;
        }
    }
    let w_rgb = bound.node("torgb.weight")?;
    let fan_in = tape.value(w_rgb).shape()[1];
    let w_rgb = tape.scale(w_rgb, 1.0 / (fan_in as f64).sqrt())?;
    x = tape.conv2d(x, w_rgb, 1, 0)?;
    let b_rgb = bound.node("torgb.bias")?;
    x = tape.channel_bias(x, b_rgb)?;
    let r = cfg.resolution;
    tape.reshape(x, &[3, r, r])
}
