use rand::Rng;

use crate::autodiff::{NodeId, Tape, LEAKY_RELU_SLOPE};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::params::{BoundParams, ParamSet};
use super::{ModelConfig, ACTIVATION_GAIN};

/// Convolutional real/fake classifier mirroring the synthesis network.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut p = ParamSet::new();
        let r = config.resolution;
        p.insert_normal("fromrgb.weight", &[config.channels(r), 3, 1, 1], rng)?;
        p.insert("fromrgb.bias", Tensor::zeros(&[config.channels(r)]))?;
        let mut res = r;
        while res > 4 {
            let (cin, cout) = (config.channels(res), config.channels(res / 2));
            p.insert_normal(format!("d{res}.conv.weight"), &[cout, cin, 3, 3], rng)?;
            p.insert(format!("d{res}.conv.bias"), Tensor::zeros(&[cout]))?;
            res /= 2;
        }
        let c4 = config.channels(4);
        p.insert_normal("final.conv.weight", &[c4, c4, 3, 3], rng)?;
        p.insert("final.conv.bias", Tensor::zeros(&[c4]))?;
        p.insert_normal("final.dense.weight", &[c4 * 16, 1], rng)?;
        p.insert("final.dense.bias", Tensor::zeros(&[1, 1]))?;
        Ok(Discriminator { config: config.clone(), params: p })
    }

    /// Realness logit of one 3×R×R image; higher means "real".
    pub fn forward(&self, image: &Tensor<T>) -> Result<T> {
        let mut tape = Tape::new();
        let bound = self.params.register(&mut tape, false);
        let x = tape.constant(image.clone());
        let logit = self.graph(&mut tape, &bound, x)?;
        tape.value(logit).item()
    }

    /// Logit and its gradient with respect to the input image.
    pub fn forward_with_input_grad(&self, image: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        let mut tape = Tape::new();
        let bound = self.params.register(&mut tape, false);
        let x = tape.param(image.clone());
        let logit = self.graph(&mut tape, &bound, x)?;
        let grads = tape.backward(logit)?;
        let g = grads.wrt(x).cloned().expect("image registered as parameter");
        Ok((tape.value(logit).item()?, g))
    }

    /// Records the discriminator on `tape`; `image` is a 3×R×R node.
    pub fn graph(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams<'_, T>,
        image: NodeId,
    ) -> Result<NodeId> {
        let r = self.config.resolution;
        if tape.value(image).shape() != [3, r, r] {
            return shape_err(format!(
                "discriminator expects 3x{r}x{r}, got {:?}",
                tape.value(image).shape()
            ));
        }
        let mut x = tape.reshape(image, &[1, 3, r, r])?;
        x = conv_act(tape, bound, "fromrgb.weight", "fromrgb.bias", x, 0)?;
        let mut res = r;
        while res > 4 {
            x = conv_act(
                tape,
                bound,
                &format!("d{res}.conv.weight"),
                &format!("d{res}.conv.bias"),
                x,
                1,
            )?;
            x = tape.downsample2x(x)?;
            res /= 2;
        }
        x = conv_act(tape, bound, "final.conv.weight", "final.conv.bias", x, 1)?;
        let c4 = self.config.channels(4);
        let flat = tape.reshape(x, &[1, c4 * 16])?;
        let w = bound.node("final.dense.weight")?;
        let w = tape.scale(w, 1.0 / ((c4 * 16) as f64).sqrt())?;
        let h = tape.matmul(flat, w)?;
        let b = bound.node("final.dense.bias")?;
        let out = tape.add(h, b)?;
        tape.reshape(out, &[])
    }
}

fn conv_act<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams<'_, T>,
    weight: &str,
    bias: &str,
    x: NodeId,
    pad: usize,
) -> Result<NodeId> {
    let w = bound.node(weight)?;
    let shape = tape.value(w).shape().to_vec();
    let fan_in = shape[1] * shape[2] * shape[3];
    let w = tape.scale(w, 1.0 / (fan_in as f64).sqrt())?;
    let y = tape.conv2d(x, w, 1, pad)?;
    let b = bound.node(bias)?;
    let y = tape.channel_bias(y, b)?;
    let y = tape.leaky_relu(y, LEAKY_RELU_SLOPE)?;
    tape.scale(y, ACTIVATION_GAIN)
}
