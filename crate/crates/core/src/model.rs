//! The motion encoder: frame embedding, sinusoidal positions, pre-norm
//! attention blocks and a linear pose head, rolled out one frame at a time.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointError, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    /// `3N` for an `N`-joint skeleton.
    pub input_dim: usize,
    /// Frames of history `T` consumed per prediction.
    pub history_len: usize,
    /// Predict an offset from the last frame instead of the pose itself.
    pub predict_delta: bool,
    /// Millimetres per internal unit. Inputs are divided by it before the
    /// embedding and outputs multiplied by it after the head.
    pub position_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            num_heads: 4,
            model_dim: 64,
            ff_dim: 128,
            input_dim: 51,
            history_len: 50,
            predict_delta: false,
            position_scale: 1000.0,
        }
    }
}

impl EncoderConfig {
    pub fn for_joints(joint_count: usize) -> Self {
        Self {
            input_dim: 3 * joint_count,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("model_dim", self.model_dim),
            ("ff_dim", self.ff_dim),
            ("input_dim", self.input_dim),
            ("history_len", self.history_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if !self.input_dim.is_multiple_of(3) {
            return Err(Error::Config(format!("input_dim {} is not a multiple of 3", self.input_dim)));
        }
        if !(self.position_scale.is_finite() && self.position_scale > 0.0) {
            return Err(Error::Config("position_scale must be finite and positive".into()));
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.input_dim / 3
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn parameter_count(&self) -> usize {
        let (d, f, i) = (self.model_dim, self.ff_dim, self.input_dim);
        let layer = 2 * 2 * d + 4 * (d * d + d) + (d * f + f) + (f * d + d);
        (i * d + d) + self.num_layers * layer + (d * i + i)
    }
}

/// `length × model_dim` table with `sin` on even channels and `cos` on odd
/// ones, both at angle `p / 10000^(2i / model_dim)`.
pub fn positional_encoding(length: usize, model_dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((length, model_dim), |(p, c)| {
        let i = c / 2;
        let angle = p as f64 / 10000f64.powf((2 * i) as f64 / model_dim as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// `x + Wo·MHA(LN(x))`, then `+ FF(LN(·))`.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub norm1: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm2: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    num_heads: usize,
}

impl AttentionBlock {
    pub fn new<R: Rng + ?Sized>(model_dim: usize, ff_dim: usize, num_heads: usize, rng: &mut R) -> Self {
        Self {
            norm1: LayerNorm::new(model_dim),
            query: Linear::new(model_dim, model_dim, rng),
            key: Linear::new(model_dim, model_dim, rng),
            value: Linear::new(model_dim, model_dim, rng),
            output: Linear::new(model_dim, model_dim, rng),
            norm2: LayerNorm::new(model_dim),
            ff_in: Linear::new(model_dim, ff_dim, rng),
            ff_out: Linear::new(ff_dim, model_dim, rng),
            num_heads,
        }
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x, false)?.0)
    }

    /// Output row for the final position only (`1 × model_dim`). Keys and
    /// values still come from every position.
    pub fn forward_last(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x, true)?.0)
    }

    /// Attention probabilities, `num_heads × T × T`.
    pub fn attention_weights(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x, false)?.1)
    }

    fn run(&self, x: &Tensor, last_only: bool) -> Result<(Tensor, Tensor)> {
        if x.rank() != 2 {
            return Err(Error::Contract(format!("attention input must be T x model_dim, got {:?}", x.shape())));
        }
        let (t, d) = (x.shape()[0], x.shape()[1]);
        let heads = self.num_heads;
        let dh = d / heads;
        let h = self.norm1.forward(x)?;
        let (q_src, resid) = if last_only {
            (h.narrow(0, t - 1, 1)?, x.narrow(0, t - 1, 1)?)
        } else {
            (h.clone(), x.clone())
        };
        let rows = q_src.shape()[0];
        let split = |y: Tensor, n: usize| -> Result<Tensor> { Ok(y.reshape(&[n, heads, dh])?.permute(&[1, 0, 2])?) };
        let q = split(self.query.forward(&q_src)?, rows)?;
        let k = split(self.key.forward(&h)?, t)?;
        let v = split(self.value.forward(&h)?, t)?;
        let scores = q.matmul(&k.transpose()?)?.scale(1.0 / (dh as f64).sqrt());
        let probs = scores.softmax(2)?;
        let context = probs.matmul(&v)?.permute(&[1, 0, 2])?.reshape(&[rows, d])?;
        let x1 = resid.add(&self.output.forward(&context)?)?;
        let ff = self.ff_out.forward(&self.ff_in.forward(&self.norm2.forward(&x1)?)?.relu())?;
        Ok((x1.add(&ff)?, probs))
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(16);
        out.extend(self.norm1.parameters());
        for l in [&self.query, &self.key, &self.value, &self.output] {
            out.extend(l.parameters());
        }
        out.extend(self.norm2.parameters());
        out.extend(self.ff_in.parameters());
        out.extend(self.ff_out.parameters());
        out
    }
}

#[derive(Debug, Clone)]
pub struct EncoderModel {
    config: EncoderConfig,
    pub embed: Linear,
    pub blocks: Vec<AttentionBlock>,
    pub head: Linear,
    positional: Tensor,
}

impl EncoderModel {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, i) = (config.model_dim, config.input_dim);
        let embed = Linear::new(i, d, rng);
        let blocks = (0..config.num_layers)
            .map(|_| AttentionBlock::new(d, config.ff_dim, config.num_heads, rng))
            .collect();
        let head = Linear::new(d, i, rng);
        let pe = positional_encoding(config.history_len, d);
        let positional = Tensor::new(pe.into_raw_vec_and_offset().0, &[config.history_len, d])?;
        Ok(Self {
            config,
            embed,
            blocks,
            head,
            positional,
        })
    }

    pub fn seeded(config: EncoderConfig, seed: u64) -> Result<Self> {
        Self::new(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Every parameter in canonical order: embedding, then per block
    /// `ln1, Wq, Wk, Wv, Wo, ln2, ff_in, ff_out` (each weight before its
    /// bias or gain before bias), then the head.
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = self.embed.parameters().into_iter().cloned().collect();
        for b in &self.blocks {
            out.extend(b.parameters().into_iter().cloned());
        }
        out.extend(self.head.parameters().into_iter().cloned());
        out
    }

    pub fn zero_grad(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        self.parameters().iter().flat_map(|p| p.to_vec()).collect()
    }

    fn check_history(&self, history: &Tensor) -> Result<()> {
        let c = &self.config;
        let expected = [c.history_len, c.joint_count(), 3];
        if history.shape() != expected {
            return Err(Error::Contract(format!(
                "history must have shape {expected:?} (T x N x 3), got {:?}",
                history.shape()
            )));
        }
        Ok(())
    }

    /// One forward pass over a flattened `T × 3N` window, giving `1 × 3N`.
    fn step(&self, window: &Tensor) -> Result<Tensor> {
        let scale = self.config.position_scale;
        let mut h = self.embed.forward(&window.scale(1.0 / scale))?.add(&self.positional)?;
        let last = self.blocks.len() - 1;
        for (i, block) in self.blocks.iter().enumerate() {
            h = if i == last { block.forward_last(&h)? } else { block.forward(&h)? };
        }
        let out = self.head.forward(&h)?.scale(scale);
        if self.config.predict_delta {
            let t = window.shape()[0];
            Ok(out.add(&window.narrow(0, t - 1, 1)?)?)
        } else {
            Ok(out)
        }
    }

    /// Predicted pose `N × 3` for the frame after `history` (`T × N × 3`).
    pub fn predict_next(&self, history: &Tensor) -> Result<Tensor> {
        self.check_history(history)?;
        let c = &self.config;
        let window = history.reshape(&[c.history_len, c.input_dim])?;
        Ok(self.step(&window)?.reshape(&[c.joint_count(), 3])?)
    }

    /// `frames × N × 3` predictions. Each prediction is appended to the
    /// window and the oldest frame dropped before the next pass.
    pub fn rollout(&self, history: &Tensor, frames: usize) -> Result<Tensor> {
        self.check_history(history)?;
        if frames == 0 {
            return Err(Error::Contract("rollout needs at least one frame".into()));
        }
        let c = &self.config;
        let t = c.history_len;
        let mut window = history.reshape(&[t, c.input_dim])?;
        let mut preds = Vec::with_capacity(frames);
        for k in 0..frames {
            let next = self.step(&window)?;
            if k + 1 < frames {
                window = if t == 1 {
                    next.clone()
                } else {
                    Tensor::concat(&[&window.narrow(0, 1, t - 1)?, &next], 0)?
                };
            }
            preds.push(next);
        }
        let refs: Vec<&Tensor> = preds.iter().collect();
        Ok(Tensor::concat(&refs, 0)?.reshape(&[frames, c.joint_count(), 3])?)
    }

    /// Graph-free rollout on plain arrays.
    pub fn predict(&self, history: ArrayView3<f64>, frames: usize) -> Result<Array3<f64>> {
        let h = Tensor::from_array(&history)?;
        let out = no_grad(|| self.rollout(&h, frames))?;
        Ok(Array3::from_shape_vec((frames, self.config.joint_count(), 3), out.to_vec()).expect("rollout shape"))
    }

    /// Attention probabilities of every block for `history`, each
    /// `num_heads × T × T`.
    pub fn attention_maps(&self, history: &Tensor) -> Result<Vec<Tensor>> {
        self.check_history(history)?;
        let c = &self.config;
        let window = history.reshape(&[c.history_len, c.input_dim])?;
        let mut h = self
            .embed
            .forward(&window.scale(1.0 / c.position_scale))?
            .add(&self.positional)?;
        let mut maps = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            maps.push(block.attention_weights(&h)?);
            h = block.forward(&h)?;
        }
        Ok(maps)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::encode(&ModelConfig::Encoder(self.config.clone()), &self.parameters())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (config, values) = checkpoint::decode(bytes)?;
        Self::from_checkpoint(config, &values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::write(
            path,
            &ModelConfig::Encoder(self.config.clone()),
            &self.parameters(),
        )?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, values) = checkpoint::read(path)?;
        Self::from_checkpoint(config, &values)
    }

    fn from_checkpoint(config: ModelConfig, values: &[f64]) -> Result<Self> {
        let ModelConfig::Encoder(config) = config else {
            return Err(CheckpointError::KindMismatch {
                found: config.kind(),
                expected: "encoder",
            }
            .into());
        };
        config
            .validate()
            .map_err(|e| CheckpointError::Config(e.to_string()))?;
        let model = Self::seeded(config, 0)?;
        checkpoint::assign(&model.parameters(), values);
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            num_layers: 2,
            num_heads: 2,
            model_dim: 8,
            ff_dim: 12,
            input_dim: 9,
            history_len: 6,
            ..EncoderConfig::default()
        }
    }

    fn history(cfg: &EncoderConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.history_len * cfg.input_dim;
        let data = (0..n).map(|_| rng.gen_range(-500.0..500.0)).collect();
        Tensor::new(data, &[cfg.history_len, cfg.joint_count(), 3]).unwrap()
    }

    #[test]
    fn positional_encoding_position_zero() {
        let pe = positional_encoding(3, 6);
        assert_eq!(pe.row(0).to_vec(), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn positional_encoding_closed_form() {
        let pe = positional_encoding(2, 4);
        let expected = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
        for (a, b) in pe.row(1).iter().zip(expected) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(positional_encoding(1000, 64).iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        let bad = EncoderConfig {
            model_dim: 10,
            num_heads: 4,
            ..EncoderConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_count_matches_tensors() {
        for cfg in [tiny(), EncoderConfig::default()] {
            let m = EncoderModel::seeded(cfg.clone(), 1).unwrap();
            let n: usize = m.parameters().iter().map(Tensor::numel).sum();
            assert_eq!(n, cfg.parameter_count());
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let cfg = tiny();
        let m = EncoderModel::seeded(cfg.clone(), 2).unwrap();
        for map in m.attention_maps(&history(&cfg, 3)).unwrap() {
            assert_eq!(map.shape(), &[2, 6, 6]);
            for row in map.data().chunks(6) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zeroed_output_projections_make_a_block_the_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut block = AttentionBlock::new(8, 12, 2, &mut rng);
        block.output = Linear::zeros(8, 8);
        block.ff_out = Linear::zeros(12, 8);
        let x = Tensor::new((0..40).map(|i| (i as f64 * 0.37).sin()).collect(), &[5, 8]).unwrap();
        assert_eq!(block.forward(&x).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn last_row_path_matches_full_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block = AttentionBlock::new(8, 12, 2, &mut rng);
        let x = Tensor::new((0..40).map(|i| (i as f64 * 0.61).cos()).collect(), &[5, 8]).unwrap();
        let full = block.forward(&x).unwrap().to_vec();
        let last = block.forward_last(&x).unwrap().to_vec();
        for (a, b) in full[32..].iter().zip(&last) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn predict_next_shape_and_determinism() {
        let cfg = tiny();
        let m = EncoderModel::seeded(cfg.clone(), 6).unwrap();
        let h = history(&cfg, 7);
        let a = m.predict_next(&h).unwrap();
        assert_eq!(a.shape(), &[3, 3]);
        assert_eq!(a.to_vec(), m.predict_next(&h).unwrap().to_vec());
    }

    #[test]
    fn wrong_history_length_is_a_contract_error() {
        let cfg = tiny();
        let m = EncoderModel::seeded(cfg, 6).unwrap();
        let h = Tensor::zeros(&[5, 3, 3]).unwrap();
        assert!(matches!(m.predict_next(&h), Err(Error::Contract(_))));
    }

    #[test]
    fn rollout_of_one_is_predict_next() {
        let cfg = tiny();
        let m = EncoderModel::seeded(cfg.clone(), 8).unwrap();
        let h = history(&cfg, 9);
        assert_eq!(m.rollout(&h, 1).unwrap().to_vec(), m.predict_next(&h).unwrap().to_vec());
    }

    #[test]
    fn rollout_prefix_is_bitwise_stable() {
        let cfg = tiny();
        let m = EncoderModel::seeded(cfg.clone(), 10).unwrap();
        let h = history(&cfg, 11);
        let long = m.rollout(&h, 25).unwrap().to_vec();
        let short = m.rollout(&h, 10).unwrap().to_vec();
        assert_eq!(&long[..short.len()], &short[..]);
    }

    #[test]
    fn two_second_rollout_from_default_history() {
        let cfg = EncoderConfig {
            num_layers: 1,
            ..EncoderConfig::default()
        };
        let m = EncoderModel::seeded(cfg.clone(), 12).unwrap();
        let h = history(&cfg, 13).to_array().into_dimensionality::<ndarray::Ix3>().unwrap();
        let out = m.predict(h.view(), 50).unwrap();
        assert_eq!(out.shape(), &[50, 17, 3]);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn predict_delta_anchors_on_last_frame() {
        let cfg = EncoderConfig {
            predict_delta: true,
            ..tiny()
        };
        let m = EncoderModel::seeded(cfg.clone(), 14).unwrap();
        m.head.weight.data_mut().fill(0.0);
        let h = history(&cfg, 15);
        let last = h.narrow(0, cfg.history_len - 1, 1).unwrap().to_vec();
        assert_eq!(m.predict_next(&h).unwrap().to_vec(), last);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let cfg = tiny();
        let m = EncoderModel::seeded(cfg.clone(), 16).unwrap();
        let back = EncoderModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back.config(), m.config());
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(back.flat_parameters()), bits(m.flat_parameters()));
        let h = history(&cfg, 17);
        assert_eq!(
            back.predict_next(&h).unwrap().to_vec(),
            m.predict_next(&h).unwrap().to_vec()
        );
    }

    #[test]
    fn checkpoint_errors() {
        let m = EncoderModel::seeded(tiny(), 18).unwrap();
        let mut bytes = m.to_bytes();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            EncoderModel::from_bytes(&bytes),
            Err(Error::Checkpoint(CheckpointError::Version { found: 7, expected: 1 }))
        ));
        let bytes = m.to_bytes();
        assert!(matches!(
            EncoderModel::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Checkpoint(CheckpointError::Truncated { .. }))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            EncoderModel::from_bytes(&long),
            Err(Error::Checkpoint(CheckpointError::TrailingBytes(1)))
        ));
        assert!(matches!(
            EncoderModel::from_bytes(b"not a checkpoint"),
            Err(Error::Checkpoint(CheckpointError::BadMagic))
        ));
    }
}
