//! Alternating adversarial training: auto-regressive rollout, a
//! discriminator update on real versus generated frame differences, then an
//! encoder update on the composite loss.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Split, WindowedSample};
use crate::discriminator::{discriminator_loss, DiscriminatorConfig, DiscriminatorModel};
use crate::error::{io_error, Error, Result};
use crate::eval::{mpjpe_at_horizon, HorizonSet, Predictor, DEFAULT_HORIZONS_MS};
use crate::losses::{boundary_deltas, total_loss, LossBreakdown, LossNorm, LossWeights};
use crate::model::{EncoderConfig, EncoderModel};
use crate::skeleton::SkeletonTopology;
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    /// Every predicted frame is fed back as input; no teacher forcing.
    #[default]
    FullAutoregressive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_disc: f64,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub disc_steps_per_gen_step: usize,
    /// Global gradient norm limit; `inf` disables clipping.
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub loss_norm: LossNorm,
    /// Observed frames `T`.
    pub history_len: usize,
    /// Predicted frames `L`.
    pub future_len: usize,
    pub stride: usize,
    pub rollout_mode: RolloutMode,
    /// Training windows drawn (without replacement) per epoch; all when unset.
    pub windows_per_epoch: Option<usize>,
    /// Test windows scored after each epoch; all when unset, none when 0.
    pub validation_windows: Option<usize>,
    pub validation_horizons_ms: Vec<u32>,
    /// Write checkpoints every this many epochs (the final epoch always).
    pub checkpoint_every: usize,
    /// Keep the discriminator's parameters fixed.
    pub freeze_discriminator: bool,
    /// `input_dim` and `history_len` are taken from the corpus and
    /// `history_len` above.
    pub encoder: EncoderConfig,
    /// `input_dim` is taken from the corpus.
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr_encoder: 1e-3,
            lr_disc: 1e-3,
            adam_betas: [0.9, 0.999],
            adam_eps: 1e-8,
            disc_steps_per_gen_step: 1,
            grad_clip_norm: 1.0,
            seed: 0,
            loss_weights: LossWeights::default(),
            loss_norm: LossNorm::L2,
            history_len: 50,
            future_len: 25,
            stride: 5,
            rollout_mode: RolloutMode::FullAutoregressive,
            windows_per_epoch: Some(64),
            validation_windows: Some(24),
            validation_horizons_ms: DEFAULT_HORIZONS_MS.to_vec(),
            checkpoint_every: 5,
            freeze_discriminator: false,
            encoder: EncoderConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("history_len", self.history_len),
            ("future_len", self.future_len),
            ("stride", self.stride),
            ("checkpoint_every", self.checkpoint_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.windows_per_epoch == Some(0) {
            return Err(Error::Config("windows_per_epoch must be at least 1".into()));
        }
        for (name, v) in [("lr_encoder", self.lr_encoder), ("lr_disc", self.lr_disc)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and positive")));
            }
        }
        let [b1, b2] = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be finite and positive".into()));
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm <= 0.0 {
            return Err(Error::Config("grad_clip_norm must be positive".into()));
        }
        self.loss_weights.validate()?;
        Ok(())
    }

    /// Model configurations completed for an `N`-joint skeleton.
    pub fn model_configs(&self, joint_count: usize) -> (EncoderConfig, DiscriminatorConfig) {
        let encoder = EncoderConfig {
            input_dim: 3 * joint_count,
            history_len: self.history_len,
            ..self.encoder.clone()
        };
        let discriminator = DiscriminatorConfig {
            input_dim: 3 * joint_count,
            ..self.discriminator.clone()
        };
        (encoder, discriminator)
    }
}

/// Adam with bias correction. Parameters without a gradient are treated as
/// having a zero gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    betas: [f64; 2],
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64, betas: [f64; 2], eps: f64) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            lr,
            betas,
            eps,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &[Tensor]) {
        self.t += 1;
        let [b1, b2] = self.betas;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for ((p, m), v) in params.iter().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad();
            let mut data = p.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                data[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

pub fn global_grad_norm(params: &[Tensor]) -> f64 {
    params
        .iter()
        .filter_map(Tensor::grad)
        .flat_map(|g| g.into_iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &[Tensor], max_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if norm > max_norm && norm.is_finite() {
        let c = max_norm / norm;
        for p in params {
            p.scale_grad(c);
        }
    }
    norm
}

/// Means over the steps of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub loss: LossBreakdown,
    pub disc_loss: f64,
    /// Encoder gradient norm before clipping.
    pub encoder_grad_norm: f64,
}

/// Models, optimizers and step counters of one training run.
pub struct Trainer {
    config: TrainConfig,
    topology: SkeletonTopology,
    pub encoder: EncoderModel,
    pub discriminator: DiscriminatorModel,
    encoder_opt: Adam,
    disc_opt: Adam,
    epoch: usize,
    step: usize,
}

impl Trainer {
    /// Fresh models initialised from `rng` (encoder first).
    pub fn new(config: TrainConfig, topology: SkeletonTopology, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let (ec, dc) = config.model_configs(topology.joint_count());
        let encoder = EncoderModel::new(ec, rng)?;
        let discriminator = DiscriminatorModel::new(dc, rng)?;
        Self::from_models(config, topology, encoder, discriminator)
    }

    pub fn from_models(
        config: TrainConfig,
        topology: SkeletonTopology,
        encoder: EncoderModel,
        discriminator: DiscriminatorModel,
    ) -> Result<Self> {
        config.validate()?;
        let [b1, b2] = config.adam_betas;
        let encoder_opt = Adam::new(&encoder.parameters(), config.lr_encoder, [b1, b2], config.adam_eps);
        let disc_opt = Adam::new(&discriminator.parameters(), config.lr_disc, [b1, b2], config.adam_eps);
        Ok(Self {
            config,
            topology,
            encoder,
            discriminator,
            encoder_opt,
            disc_opt,
            epoch: 0,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    fn diverged(&self, what: &str) -> Error {
        Error::Divergence {
            epoch: self.epoch,
            step: self.step,
            what: what.to_owned(),
        }
    }

    fn check_batch(&self, batch: &[WindowedSample]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Contract("empty training batch".into()));
        }
        let n = self.topology.joint_count();
        let (t, l) = (self.config.history_len, self.config.future_len);
        for s in batch {
            if s.input.shape() != [t, n, 3] || s.target.shape() != [l, n, 3] {
                return Err(Error::Contract(format!(
                    "sample shapes {:?} / {:?} differ from the configured {:?} / {:?}",
                    s.input.shape(),
                    s.target.shape(),
                    [t, n, 3],
                    [l, n, 3]
                )));
            }
        }
        Ok(())
    }

    /// Discriminator update on real versus (detached) generated differences.
    /// Returns the mean loss over the `disc_steps_per_gen_step` updates, or
    /// the loss value alone when the discriminator is frozen.
    pub fn update_discriminator(&mut self, real: &Tensor, fake: &Tensor) -> Result<f64> {
        let fake = fake.detach();
        if self.config.freeze_discriminator {
            return Ok(no_grad(|| discriminator_loss(&self.discriminator, real, &fake))?.item()?);
        }
        let params = self.discriminator.parameters();
        let mut total = 0.0;
        let steps = self.config.disc_steps_per_gen_step;
        for _ in 0..steps {
            self.discriminator.zero_grad();
            let loss = discriminator_loss(&self.discriminator, real, &fake)?;
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(self.diverged("discriminator loss"));
            }
            loss.backward()?;
            clip_grad_norm(&params, self.config.grad_clip_norm);
            self.disc_opt.step(&params);
            total += value;
        }
        self.discriminator.zero_grad();
        Ok(total / steps.max(1) as f64)
    }

    pub fn train_step(&mut self, batch: &[WindowedSample]) -> Result<StepStats> {
        self.check_batch(batch)?;
        self.step += 1;
        let l = self.config.future_len;

        let mut preds = Vec::with_capacity(batch.len());
        let mut lasts = Vec::with_capacity(batch.len());
        let mut truths = Vec::with_capacity(batch.len());
        for s in batch {
            let history = Tensor::from_array(&s.input)?;
            let t = s.history_len();
            lasts.push(history.narrow(0, t - 1, 1)?.reshape(&history.shape()[1..])?);
            truths.push(Tensor::from_array(&s.target)?);
            preds.push(self.encoder.rollout(&history, l)?);
        }

        let real = no_grad(|| -> Result<Tensor> {
            let d: Vec<Tensor> = lasts
                .iter()
                .zip(&truths)
                .map(|(x, y)| boundary_deltas(x, y))
                .collect::<Result<_>>()?;
            Ok(Tensor::concat(&d.iter().collect::<Vec<_>>(), 0)?)
        })?;
        let fake = no_grad(|| -> Result<Tensor> {
            let d: Vec<Tensor> = lasts
                .iter()
                .zip(&preds)
                .map(|(x, y)| boundary_deltas(x, &y.detach()))
                .collect::<Result<_>>()?;
            Ok(Tensor::concat(&d.iter().collect::<Vec<_>>(), 0)?)
        })?;
        let disc_loss = self.update_discriminator(&real, &fake)?;

        self.encoder.zero_grad();
        let mut parts = Vec::with_capacity(batch.len());
        let mut sum: Option<Tensor> = None;
        for ((pred, truth), last) in preds.iter().zip(&truths).zip(&lasts) {
            let c = total_loss(
                pred,
                truth,
                &self.topology,
                &self.discriminator,
                &self.config.loss_weights,
                last,
                self.config.loss_norm,
            )?;
            parts.push(c.breakdown);
            sum = Some(match sum {
                None => c.total,
                Some(acc) => acc.add(&c.total)?,
            });
        }
        let objective = sum.expect("non-empty batch").scale(1.0 / batch.len() as f64);
        let loss = LossBreakdown::mean(&parts);
        if !objective.item()?.is_finite() {
            return Err(self.diverged("total loss"));
        }
        objective.backward()?;
        let params = self.encoder.parameters();
        let grad_norm = clip_grad_norm(&params, self.config.grad_clip_norm);
        if !grad_norm.is_finite() {
            return Err(self.diverged("encoder gradient norm"));
        }
        self.encoder_opt.step(&params);
        self.encoder.zero_grad();

        Ok(StepStats {
            loss,
            disc_loss,
            encoder_grad_norm: grad_norm,
        })
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train: LossBreakdown,
    pub disc_loss: f64,
    /// Validation error per horizon of the log, in mm.
    pub val_mpjpe: Vec<f64>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub horizons_ms: Vec<u32>,
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mpjpe,bone,adversarial,total,disc_loss");
        for ms in &self.horizons_ms {
            write!(out, ",val_mpjpe_{ms}ms").expect("writing to a String");
        }
        out.push_str(",wall_clock_s\n");
        for r in &self.records {
            let t = &r.train;
            write!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, t.mpjpe, t.bone, t.adversarial, t.total, r.disc_loss
            )
            .expect("writing to a String");
            for v in &r.val_mpjpe {
                write!(out, ",{v}").expect("writing to a String");
            }
            writeln!(out, ",{:.3}", r.wall_clock_s).expect("writing to a String");
        }
        out
    }

    /// Records with wall-clock time zeroed, for comparing runs.
    pub fn without_timing(&self) -> TrainLog {
        TrainLog {
            horizons_ms: self.horizons_ms.clone(),
            records: self
                .records
                .iter()
                .map(|r| EpochRecord {
                    wall_clock_s: 0.0,
                    ..r.clone()
                })
                .collect(),
        }
    }
}

pub struct FitOutcome {
    pub encoder: EncoderModel,
    pub discriminator: DiscriminatorModel,
    pub log: TrainLog,
}

pub const TRAIN_LOG_FILE: &str = "train_log.csv";

pub fn encoder_checkpoint_name(epoch: usize) -> String {
    format!("encoder_epoch_{epoch:04}.ckpt")
}

pub fn discriminator_checkpoint_name(epoch: usize) -> String {
    format!("discriminator_epoch_{epoch:04}.ckpt")
}

/// The encoder checkpoint with the highest epoch in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in std::fs::read_dir(dir).map_err(io_error(dir))? {
        let path = entry.map_err(io_error(dir))?.path();
        let epoch = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("encoder_epoch_"))
            .and_then(|n| n.strip_suffix(".ckpt"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(e) = epoch {
            if best.as_ref().is_none_or(|(b, _)| e > *b) {
                best = Some((e, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Evenly spaced subset of at most `cap` windows, in their original order.
fn spread(windows: Vec<WindowedSample>, cap: Option<usize>) -> Vec<WindowedSample> {
    match cap {
        Some(k) if k < windows.len() => {
            let n = windows.len();
            (0..k).map(|i| windows[i * n / k].clone()).collect()
        }
        _ => windows,
    }
}

fn validate_model(model: &EncoderModel, windows: &[WindowedSample], frames: &[usize]) -> Result<Vec<f64>> {
    let Some(&span) = frames.last() else {
        return Ok(Vec::new());
    };
    let mut sums = vec![0.0; frames.len()];
    for w in windows {
        let pred = Predictor::predict(model, w.input.view(), span)?;
        let truth = w.target.slice(ndarray::s![..span, .., ..]);
        for (k, &f) in frames.iter().enumerate() {
            sums[k] += mpjpe_at_horizon(pred.view(), truth, f)?;
        }
    }
    Ok(sums.into_iter().map(|s| s / windows.len() as f64).collect())
}

pub fn fit(corpus: &Corpus, config: &TrainConfig) -> Result<FitOutcome> {
    fit_with(corpus, config, None, |_| {})
}

/// Trains from scratch. With `out_dir`, checkpoints and the log CSV are
/// written there; `on_epoch` sees each record as it is completed.
pub fn fit_with(
    corpus: &Corpus,
    config: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    config.validate()?;
    let (t, l) = (config.history_len, config.future_len);
    if corpus.is_empty(Split::Train) {
        return Err(Error::Config("corpus has no training sequences".into()));
    }
    let train = corpus.windows(Split::Train, t, l, config.stride)?;
    if train.is_empty() {
        return Err(Error::Config("corpus has no training windows".into()));
    }
    let fps = corpus.sequences(Split::Train).next().expect("non-empty").fps();
    let validation = if corpus.is_empty(Split::Test) {
        Vec::new()
    } else {
        spread(corpus.windows(Split::Test, t, l, config.stride)?, config.validation_windows)
    };
    let horizons = HorizonSet::new(config.validation_horizons_ms.clone(), fps)?.within(l);
    let (horizons_ms, frames) = match (&horizons, validation.is_empty()) {
        (Some(h), false) => (h.milliseconds().to_vec(), h.frames().to_vec()),
        _ => (Vec::new(), Vec::new()),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trainer = Trainer::new(config.clone(), corpus.topology().clone(), &mut rng)?;
    let mut log = TrainLog {
        horizons_ms,
        records: Vec::new(),
    };
    let started = Instant::now();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        trainer.epoch = epoch;
        order.shuffle(&mut rng);
        let take = config.windows_per_epoch.unwrap_or(order.len()).min(order.len());
        let mut stats = Vec::new();
        for chunk in order[..take].chunks(config.batch_size) {
            let batch: Vec<WindowedSample> = chunk.iter().map(|&i| train[i].clone()).collect();
            stats.push(trainer.train_step(&batch)?);
        }
        let record = EpochRecord {
            epoch,
            train: LossBreakdown::mean(&stats.iter().map(|s| s.loss).collect::<Vec<_>>()),
            disc_loss: stats.iter().map(|s| s.disc_loss).sum::<f64>() / stats.len() as f64,
            val_mpjpe: validate_model(&trainer.encoder, &validation, &frames)?,
            wall_clock_s: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.records.push(record);
        if let Some(dir) = out_dir {
            if epoch % config.checkpoint_every == 0 || epoch == config.epochs {
                trainer.encoder.save(&dir.join(encoder_checkpoint_name(epoch)))?;
                trainer.discriminator.save(&dir.join(discriminator_checkpoint_name(epoch)))?;
            }
            let path = dir.join(TRAIN_LOG_FILE);
            std::fs::write(&path, log.to_csv()).map_err(io_error(&path))?;
        }
    }
    Ok(FitOutcome {
        encoder: trainer.encoder,
        discriminator: trainer.discriminator,
        log,
    })
}

#[cfg(test)]
mod tests {
    use ndarray::Array3;
    use rand::Rng;

    use super::*;

    fn chain(n: usize) -> SkeletonTopology {
        let names = (0..n).map(|i| format!("j{i}")).collect();
        let parents = (0..n).map(|i| i.checked_sub(1)).collect();
        SkeletonTopology::new(names, parents).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 2,
            history_len: 4,
            future_len: 3,
            stride: 2,
            windows_per_epoch: Some(4),
            validation_windows: Some(2),
            validation_horizons_ms: vec![40, 120],
            encoder: EncoderConfig {
                num_layers: 1,
                num_heads: 2,
                model_dim: 8,
                ff_dim: 8,
                ..EncoderConfig::default()
            },
            discriminator: DiscriminatorConfig {
                hidden_dims: vec![6],
                ..DiscriminatorConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn batch(rng: &mut ChaCha8Rng, n: usize, cfg: &TrainConfig) -> Vec<WindowedSample> {
        (0..n)
            .map(|i| WindowedSample {
                input: Array3::from_shape_fn((cfg.history_len, 3, 3), |_| rng.gen_range(-200.0..200.0)),
                target: Array3::from_shape_fn((cfg.future_len, 3, 3), |_| rng.gen_range(-200.0..200.0)),
                source: i,
                start: 0,
                action: "walk".into(),
            })
            .collect()
    }

    #[test]
    fn epochs_zero_is_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let p = Tensor::parameter(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let q = Tensor::parameter(vec![1.0], &[1]).unwrap();
        p.square().sum().scale(10.0).add(&q.scale(5.0).sum()).unwrap().backward().unwrap();
        let before = clip_grad_norm(&[p.clone(), q.clone()], 1.0);
        assert!(before > 1.0);
        assert!(global_grad_norm(&[p, q]) <= 1.0 + 1e-9);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let p = Tensor::parameter(vec![1.0, -1.0], &[2]).unwrap();
        p.mul(&Tensor::new(vec![3.0, -0.5], &[2]).unwrap()).unwrap().sum().backward().unwrap();
        let mut opt = Adam::new(std::slice::from_ref(&p), 0.1, [0.9, 0.999], 1e-8);
        opt.step(std::slice::from_ref(&p));
        let v = p.to_vec();
        assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn frozen_discriminator_without_adversarial_weight_is_untouched() {
        let mut cfg = small_config();
        cfg.freeze_discriminator = true;
        cfg.loss_weights.lambda_adv = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut trainer = Trainer::new(cfg.clone(), chain(3), &mut rng).unwrap();
        let before = trainer.discriminator.flat_parameters();
        let enc_before = trainer.encoder.flat_parameters();
        let b = batch(&mut rng, 2, &cfg);
        trainer.train_step(&b).unwrap();
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(trainer.discriminator.flat_parameters()), bits(before));
        assert_ne!(trainer.encoder.flat_parameters(), enc_before);
    }

    #[test]
    fn discriminator_update_leaves_encoder_grads_empty() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut trainer = Trainer::new(cfg.clone(), chain(3), &mut rng).unwrap();
        let s = &batch(&mut rng, 1, &cfg)[0];
        let history = Tensor::from_array(&s.input).unwrap();
        let pred = trainer.encoder.rollout(&history, cfg.future_len).unwrap();
        let last = history.narrow(0, cfg.history_len - 1, 1).unwrap().reshape(&[3, 3]).unwrap();
        let fake = boundary_deltas(&last, &pred).unwrap();
        let real = boundary_deltas(&last, &Tensor::from_array(&s.target).unwrap()).unwrap();
        let before = trainer.discriminator.flat_parameters();
        trainer.update_discriminator(&real, &fake).unwrap();
        assert!(trainer.encoder.parameters().iter().all(|p| p.grad().is_none()));
        assert_ne!(trainer.discriminator.flat_parameters(), before);
    }

    #[test]
    fn inconsistent_batches_are_contract_errors() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut trainer = Trainer::new(cfg.clone(), chain(3), &mut rng).unwrap();
        assert!(matches!(trainer.train_step(&[]), Err(Error::Contract(_))));
        let mut b = batch(&mut rng, 2, &cfg);
        b[1].target = Array3::zeros((cfg.future_len + 1, 3, 3));
        assert!(matches!(trainer.train_step(&b), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_loss_aborts_with_position() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut trainer = Trainer::new(cfg.clone(), chain(3), &mut rng).unwrap();
        trainer.encoder.head.bias.data_mut()[0] = f64::INFINITY;
        let b = batch(&mut rng, 2, &cfg);
        match trainer.train_step(&b) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn training_log_csv_layout() {
        let log = TrainLog {
            horizons_ms: vec![160, 400],
            records: vec![EpochRecord {
                epoch: 1,
                train: LossBreakdown {
                    mpjpe: 1.5,
                    bone: 0.5,
                    adversarial: 0.25,
                    total: 2.0,
                },
                disc_loss: 0.75,
                val_mpjpe: vec![10.0, 20.0],
                wall_clock_s: 1.23456,
            }],
        };
        assert_eq!(
            log.to_csv(),
            "epoch,mpjpe,bone,adversarial,total,disc_loss,val_mpjpe_160ms,val_mpjpe_400ms,wall_clock_s\n\
             1,1.5,0.5,0.25,2,0.75,10,20,1.235\n"
        );
    }
}
