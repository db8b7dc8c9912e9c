//! Style-based generator, discriminator and the adversarial losses.

mod discriminator;
mod generator;
mod params;

use serde::{Deserialize, Serialize};

pub use discriminator::Discriminator;
pub use generator::{sample_latent, Generator};
pub use params::{BoundParams, ParamSet};

use crate::autodiff::kernels;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gain applied after every leaky_relu to keep activations near unit variance.
pub const ACTIVATION_GAIN: f64 = std::f64::consts::SQRT_2;

/// Guards the latent RMS normalization against an all-zero code only.
pub(crate) const RMS_NORM_EPS: f64 = 1e-30;

/// Default demodulation epsilon.
pub const DEMOD_EPS: f64 = 1e-8;

/// Output of the mapping network.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleVector<T: Scalar>(pub Tensor<T>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub resolution: usize,
    pub dim_z: usize,
    pub dim_w: usize,
    pub mapping_layers: usize,
    /// Feature maps at resolution r are `min(channel_max, channel_base / r)`.
    pub channel_base: usize,
    pub channel_max: usize,
    pub demod_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            resolution: 64,
            dim_z: 64,
            dim_w: 64,
            mapping_layers: 4,
            channel_base: 512,
            channel_max: 32,
            demod_eps: DEMOD_EPS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let r = self.resolution;
        if !r.is_power_of_two() || r < 4 {
            return Err(Error::Config(format!(
                "model resolution must be a power of two >= 4, got {r}"
            )));
        }
        if self.dim_z == 0 || self.dim_w == 0 || self.channel_base == 0 || self.channel_max == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.demod_eps <= 0.0 {
            return Err(Error::Config("demod_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn channels(&self, res: usize) -> usize {
        (self.channel_base / res).clamp(1, self.channel_max)
    }

    /// `log2(resolution) - 1`: one block per resolution from 4 up to R.
    pub fn synthesis_blocks(&self) -> usize {
        self.resolution.trailing_zeros() as usize - 1
    }

    /// (input, output) channels of synthesis block `b`.
    pub fn block_channels(&self, b: usize) -> (usize, usize) {
        let res = 4usize << b;
        let cin = if b == 0 {
            self.channels(4)
        } else {
            self.channels(res / 2)
        };
        (cin, self.channels(res))
    }
}

/// Scales input channel `c` of `kernel` by `style_scales[c]`, then rescales
/// each output-channel slice to unit norm:
/// `w''[f,c,i,j] = s[c]·w[f,c,i,j] / sqrt(Σ_{c,i,j} (s[c]·w[f,c,i,j])² + eps)`.
pub fn demodulate_weights<T: Scalar>(
    kernel: &Tensor<T>,
    style_scales: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    kernels::demodulate(kernel, style_scales, eps)
}

pub fn softplus<T: Scalar>(x: T) -> T {
    kernels::softplus(x)
}

/// Non-saturating logistic losses `(loss_d, loss_g)` for one real and one fake logit.
pub fn gan_losses<T: Scalar>(d_real: T, d_fake: T) -> (T, T) {
    let loss_d = softplus(d_fake) + softplus(-d_real);
    let loss_g = softplus(-d_fake);
    (loss_d, loss_g)
}

/// R1 penalty `gamma/2 · ‖∇_x D(x)‖²` for a given input gradient.
pub fn r1_penalty<T: Scalar>(input_grad: &Tensor<T>, gamma: f64) -> T {
    let sq: T = input_grad.data().iter().map(|&g| g * g).sum();
    T::lit(gamma * 0.5) * sq
}
