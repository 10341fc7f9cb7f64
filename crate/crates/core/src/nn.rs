//! Parameterised layers shared by the encoder and the discriminator.

use rand::Rng;

use crate::tensor::{Result, Tensor};

/// `y = x W + b` with `W: fan_in × fan_out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self {
            weight: Tensor::parameter(w, &[fan_in, fan_out]).expect("positive layer sizes"),
            bias: Tensor::parameter(vec![0.0; fan_out], &[fan_out]).expect("positive layer sizes"),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::parameter(vec![0.0; fan_in * fan_out], &[fan_in, fan_out]).expect("positive layer sizes"),
            bias: Tensor::parameter(vec![0.0; fan_out], &[fan_out]).expect("positive layer sizes"),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add(&self.bias)
    }

    /// Same map with parameters cut off from the graph.
    pub fn frozen(&self) -> Linear {
        Linear {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
        }
    }

    pub fn parameters(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Tensor::parameter(vec![1.0; dim], &[dim]).expect("positive layer sizes"),
            bias: Tensor::parameter(vec![0.0; dim], &[dim]).expect("positive layer sizes"),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gain, &self.bias, LAYER_NORM_EPS)
    }

    pub fn parameters(&self) -> [&Tensor; 2] {
        [&self.gain, &self.bias]
    }
}
