//! Frame-wise temporal continuity discriminator trained with least squares.
//!
//! Labels follow the objective as written: real frame differences are pushed
//! toward a score of 0, generated ones toward 1.

use std::path::Path;

use ndarray::ArrayView3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointError, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// `3N`: one flattened frame difference.
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Millimetres per internal unit for the incoming differences.
    pub delta_scale: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            input_dim: 51,
            hidden_dims: vec![128, 64],
            delta_scale: 10.0,
        }
    }
}

impl DiscriminatorConfig {
    pub fn for_joints(joint_count: usize) -> Self {
        Self {
            input_dim: 3 * joint_count,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || !self.input_dim.is_multiple_of(3) {
            return Err(Error::Config(format!(
                "discriminator input_dim {} must be a positive multiple of 3",
                self.input_dim
            )));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden_dims must be non-empty and positive".into()));
        }
        if !(self.delta_scale.is_finite() && self.delta_scale > 0.0) {
            return Err(Error::Config("delta_scale must be finite and positive".into()));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden_dims);
        w.push(1);
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

/// Anything that maps `M × N × 3` frame differences to `M` scores.
pub trait DeltaScorer {
    fn score(&self, deltas: &Tensor) -> Result<Tensor>;

    /// Scores with the scorer's own parameters held constant.
    fn score_frozen(&self, deltas: &Tensor) -> Result<Tensor> {
        self.score(deltas)
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorModel {
    config: DiscriminatorConfig,
    pub layers: Vec<Linear>,
}

impl DiscriminatorModel {
    pub fn new<R: Rng + ?Sized>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = config.widths().windows(2).map(|p| Linear::new(p[0], p[1], rng)).collect();
        Ok(Self { config, layers })
    }

    pub fn seeded(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        Self::new(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// All weights and biases zero: scores every input 0.
    pub fn zeroed(config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        let layers = config.widths().windows(2).map(|p| Linear::zeros(p[0], p[1])).collect();
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// Weight then bias of each layer, input side first.
    pub fn parameters(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| l.parameters().into_iter().cloned())
            .collect()
    }

    pub fn zero_grad(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        self.parameters().iter().flat_map(|p| p.to_vec()).collect()
    }

    fn forward(&self, layers: &[Linear], deltas: &Tensor) -> Result<Tensor> {
        let shape = deltas.shape();
        if shape.len() != 3 || shape[2] != 3 || 3 * shape[1] != self.config.input_dim {
            return Err(TensorError::Shape {
                op: "score",
                lhs: shape.to_vec(),
                rhs: vec![shape.first().copied().unwrap_or(0), self.config.input_dim / 3, 3],
            }
            .into());
        }
        let m = shape[0];
        let mut h = deltas
            .reshape(&[m, self.config.input_dim])?
            .scale(1.0 / self.config.delta_scale);
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = h.relu();
            }
        }
        Ok(h.reshape(&[m])?)
    }

    /// Scores for plain arrays, without recording a graph.
    pub fn score_array(&self, deltas: ArrayView3<f64>) -> Result<Vec<f64>> {
        if deltas.shape()[0] == 0 {
            return Err(Error::Contract("no frame differences to score".into()));
        }
        let t = Tensor::from_array(&deltas)?;
        Ok(crate::tensor::no_grad(|| self.score(&t))?.to_vec())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::encode(&ModelConfig::Discriminator(self.config.clone()), &self.parameters())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (config, values) = checkpoint::decode(bytes)?;
        Self::from_checkpoint(config, &values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::write(
            path,
            &ModelConfig::Discriminator(self.config.clone()),
            &self.parameters(),
        )?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, values) = checkpoint::read(path)?;
        Self::from_checkpoint(config, &values)
    }

    fn from_checkpoint(config: ModelConfig, values: &[f64]) -> Result<Self> {
        let ModelConfig::Discriminator(config) = config else {
            return Err(CheckpointError::KindMismatch {
                found: config.kind(),
                expected: "discriminator",
            }
            .into());
        };
        let model = Self::zeroed(config).map_err(|e| CheckpointError::Config(e.to_string()))?;
        checkpoint::assign(&model.parameters(), values);
        Ok(model)
    }
}

impl DeltaScorer for DiscriminatorModel {
    fn score(&self, deltas: &Tensor) -> Result<Tensor> {
        self.forward(&self.layers, deltas)
    }

    fn score_frozen(&self, deltas: &Tensor) -> Result<Tensor> {
        let frozen: Vec<Linear> = self.layers.iter().map(Linear::frozen).collect();
        self.forward(&frozen, deltas)
    }
}

/// `mean(D(real)^2) + mean((1 - D(fake))^2)`. The fake differences are
/// detached, so no gradient reaches whatever produced them.
pub fn discriminator_loss<D: DeltaScorer + ?Sized>(disc: &D, real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    let real_term = disc.score(real)?.square().mean();
    let fake_term = disc.score(&fake.detach())?.add_scalar(-1.0).square().mean();
    Ok(real_term.add(&fake_term)?)
}

/// `mean(D(fake)^2)`: pulls generated differences toward the real label.
/// Discriminator parameters are constants here.
pub fn generator_adversarial_loss<D: DeltaScorer + ?Sized>(disc: &D, fake: &Tensor) -> Result<Tensor> {
    Ok(disc.score_frozen(fake)?.square().mean())
}

/// Builds a constant difference tensor, rejecting an empty set.
pub fn delta_tensor(deltas: ArrayView3<f64>) -> Result<Tensor> {
    if deltas.shape()[0] == 0 {
        return Err(Error::Contract("empty set of frame differences".into()));
    }
    Ok(Tensor::from_array(&deltas)?)
}

#[cfg(test)]
mod tests {
    use ndarray::Array3;

    use super::*;

    fn small() -> DiscriminatorConfig {
        DiscriminatorConfig {
            input_dim: 6,
            hidden_dims: vec![5, 4],
            delta_scale: 10.0,
        }
    }

    fn deltas(m: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new((0..m * 6).map(|_| rng.gen_range(-30.0..30.0)).collect(), &[m, 2, 3]).unwrap()
    }

    /// Scores 1 when the first coordinate is positive, 0 otherwise.
    struct SignStub;

    impl DeltaScorer for SignStub {
        fn score(&self, deltas: &Tensor) -> Result<Tensor> {
            let m = deltas.shape()[0];
            let stride = deltas.numel() / m;
            let data = deltas.data();
            let s = (0..m).map(|i| if data[i * stride] > 0.0 { 1.0 } else { 0.0 }).collect();
            Ok(Tensor::new(s, &[m])?)
        }
    }

    #[test]
    fn zeroed_scores_are_zero_and_loss_is_one() {
        let d = DiscriminatorModel::zeroed(small()).unwrap();
        let x = deltas(7, 1);
        assert!(d.score(&x).unwrap().to_vec().iter().all(|&s| s == 0.0));
        assert_eq!(discriminator_loss(&d, &x, &deltas(3, 2)).unwrap().item().unwrap(), 1.0);
        assert_eq!(generator_adversarial_loss(&d, &x).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn perfect_discriminator_has_zero_loss() {
        let real = Tensor::new(vec![-1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &[1, 2, 3]).unwrap();
        let fake = Tensor::new(vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 1.0, 1.0, 1.0, 1.0, 1.0], &[2, 2, 3]).unwrap();
        assert_eq!(discriminator_loss(&SignStub, &real, &fake).unwrap().item().unwrap(), 0.0);
        assert_eq!(generator_adversarial_loss(&SignStub, &fake).unwrap().item().unwrap(), 1.0);
    }

    #[test]
    fn loss_matches_scalar_recomputation() {
        let d = DiscriminatorModel::seeded(small(), 3).unwrap();
        let (real, fake) = (deltas(4, 4), deltas(5, 5));
        let sr = d.score(&real).unwrap().to_vec();
        let sf = d.score(&fake).unwrap().to_vec();
        let expected = sr.iter().map(|s| s * s).sum::<f64>() / 4.0
            + sf.iter().map(|s| (1.0 - s) * (1.0 - s)).sum::<f64>() / 5.0;
        let got = discriminator_loss(&d, &real, &fake).unwrap().item().unwrap();
        assert!((got - expected).abs() <= 1e-12);
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let d = DiscriminatorModel::seeded(small(), 6).unwrap();
        let x = Tensor::zeros(&[2, 3, 3]).unwrap();
        assert!(matches!(d.score(&x), Err(Error::Tensor(TensorError::Shape { .. }))));
    }

    #[test]
    fn empty_sets_are_contract_errors() {
        let empty = Array3::<f64>::zeros((0, 2, 3));
        assert!(matches!(delta_tensor(empty.view()), Err(Error::Contract(_))));
        let d = DiscriminatorModel::seeded(small(), 7).unwrap();
        assert!(matches!(d.score_array(empty.view()), Err(Error::Contract(_))));
    }

    #[test]
    fn gradients_stay_on_their_side() {
        let d = DiscriminatorModel::seeded(small(), 8).unwrap();
        let gen_param = Tensor::parameter(vec![1.5; 12], &[2, 2, 3]).unwrap();
        let fake = deltas(2, 9).mul(&gen_param).unwrap();

        discriminator_loss(&d, &deltas(3, 10), &fake).unwrap().backward().unwrap();
        assert!(gen_param.grad().is_none());
        assert!(d.parameters().iter().any(|p| p.grad().is_some()));

        d.zero_grad();
        generator_adversarial_loss(&d, &fake).unwrap().backward().unwrap();
        assert!(gen_param.grad().is_some());
        assert!(d.parameters().iter().all(|p| p.grad().is_none()));
    }

    #[test]
    fn checkpoint_round_trip() {
        let d = DiscriminatorModel::seeded(small(), 11).unwrap();
        let back = DiscriminatorModel::from_bytes(&d.to_bytes()).unwrap();
        assert_eq!(back.config(), d.config());
        assert_eq!(back.flat_parameters(), d.flat_parameters());
        let enc = crate::model::EncoderModel::seeded(
            crate::model::EncoderConfig {
                num_layers: 1,
                num_heads: 1,
                model_dim: 2,
                ff_dim: 2,
                input_dim: 3,
                history_len: 2,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        assert!(matches!(
            DiscriminatorModel::from_bytes(&enc.to_bytes()),
            Err(Error::Checkpoint(CheckpointError::KindMismatch { .. }))
        ));
    }
}
