//! Finite-difference verification of every differentiable operation and of
//! the composite model losses.
//!
//! Each check builds small random instances, reduces the output to a scalar
//! through a fixed random weighting, and compares the recorded gradient of
//! selected entries with central differences.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discriminator::{generator_adversarial_loss, DeltaScorer, DiscriminatorConfig, DiscriminatorModel};
use crate::losses::{mpjpe, total_loss, LossNorm, LossWeights};
use crate::model::{AttentionBlock, EncoderConfig, EncoderModel};
use crate::skeleton::SkeletonTopology;
use crate::tensor::{no_grad, OpKind, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    /// Random instances per check.
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound of the relative error's denominator.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            instances: 10,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub worst_rel_err: f64,
    pub instances: usize,
    pub passed: bool,
}

/// Worst relative error over `entries` for the scalar function `f`.
pub fn max_rel_err(entries: &[(Tensor, usize)], f: &dyn Fn() -> Tensor, step: f64, floor: f64) -> f64 {
    for (p, _) in entries {
        p.zero_grad();
    }
    let out = f();
    if out.backward().is_err() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for (p, i) in entries {
        let i = *i;
        let analytic = p.grad().map_or(0.0, |g| g[i]);
        let orig = p.data()[i];
        p.data_mut()[i] = orig + step;
        let up = no_grad(|| f().item()).unwrap_or(f64::NAN);
        p.data_mut()[i] = orig - step;
        let down = no_grad(|| f().item()).unwrap_or(f64::NAN);
        p.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    worst
}

fn every_entry(params: &[Tensor]) -> Vec<(Tensor, usize)> {
    params
        .iter()
        .flat_map(|p| (0..p.numel()).map(move |i| (p.clone(), i)))
        .collect()
}

fn sampled_entries(params: &[Tensor], count: usize, rng: &mut ChaCha8Rng) -> Vec<(Tensor, usize)> {
    let all = every_entry(params);
    sample(rng, all.len(), count.min(all.len()))
        .into_iter()
        .map(|i| all[i].clone())
        .collect()
}

fn param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::parameter((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).expect("valid shape")
}

/// Values in `±[0.1, 1]`, away from the kinks of `relu` and `abs`.
fn param_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::parameter(v, shape).expect("valid shape")
}

fn constant(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).expect("valid shape")
}

/// `sum(out * W)` for a random constant `W` of the same shape.
fn weighted(out: Tensor, w: &Tensor) -> Tensor {
    out.mul(w).expect("weights match output").sum()
}

type Instance = (Vec<(Tensor, usize)>, Box<dyn Fn() -> Tensor>);

fn op_instance(kind: OpKind, k: usize, rng: &mut ChaCha8Rng) -> Instance {
    macro_rules! unary {
        ($x:expr, $shape:expr, $f:expr) => {{
            let x = $x;
            let y = no_grad(|| $f(&x));
            let w = constant(rng, y.shape());
            let _ = $shape;
            (every_entry(std::slice::from_ref(&x)), Box::new(move || weighted($f(&x), &w)) as Box<dyn Fn() -> Tensor>)
        }};
    }
    macro_rules! binary {
        ($a:expr, $b:expr, $f:expr) => {{
            let (a, b) = ($a, $b);
            let y = no_grad(|| $f(&a, &b));
            let w = constant(rng, y.shape());
            (
                every_entry(&[a.clone(), b.clone()]),
                Box::new(move || weighted($f(&a, &b), &w)) as Box<dyn Fn() -> Tensor>,
            )
        }};
    }
    match kind {
        OpKind::MatMul => binary!(param(rng, &[3, 4]), param(rng, &[2, 4, 5]), |a: &Tensor, b: &Tensor| a
            .matmul(b)
            .unwrap()),
        OpKind::Add => binary!(param(rng, &[3, 4]), param(rng, &[4]), |a: &Tensor, b: &Tensor| a.add(b).unwrap()),
        OpKind::Sub => binary!(param(rng, &[2, 3]), param(rng, &[2, 1]), |a: &Tensor, b: &Tensor| a.sub(b).unwrap()),
        OpKind::Mul => binary!(param(rng, &[3, 4]), param(rng, &[1, 4]), |a: &Tensor, b: &Tensor| a.mul(b).unwrap()),
        OpKind::Scale => {
            let c = rng.gen_range(-2.0..2.0);
            unary!(param(rng, &[5]), (), move |x: &Tensor| x.scale(c))
        }
        OpKind::AddScalar => {
            let c = rng.gen_range(-2.0..2.0);
            unary!(param(rng, &[5]), (), move |x: &Tensor| x.add_scalar(c))
        }
        OpKind::Relu => unary!(param_off_zero(rng, &[3, 4]), (), |x: &Tensor| x.relu()),
        OpKind::Abs => unary!(param_off_zero(rng, &[3, 4]), (), |x: &Tensor| x.abs()),
        OpKind::Square => unary!(param(rng, &[3, 4]), (), |x: &Tensor| x.square()),
        OpKind::Softmax => {
            let axis = k % 3;
            unary!(param(rng, &[2, 3, 4]), (), move |x: &Tensor| x.scale(3.0).softmax(axis).unwrap())
        }
        OpKind::LayerNorm => {
            let (x, g, b) = (param(rng, &[3, 5]), param(rng, &[5]), param(rng, &[5]));
            let w = constant(rng, &[3, 5]);
            let entries = every_entry(&[x.clone(), g.clone(), b.clone()]);
            (entries, Box::new(move || weighted(x.layer_norm(&g, &b, 1e-5).unwrap(), &w)))
        }
        OpKind::Reshape => unary!(param(rng, &[2, 6]), (), |x: &Tensor| x.reshape(&[3, 4]).unwrap()),
        OpKind::Permute => unary!(param(rng, &[2, 3, 4]), (), |x: &Tensor| x.permute(&[2, 0, 1]).unwrap()),
        OpKind::Narrow => unary!(param(rng, &[4, 3]), (), |x: &Tensor| x.narrow(0, 1, 2).unwrap()),
        OpKind::Concat => binary!(param(rng, &[2, 3]), param(rng, &[2, 2]), |a: &Tensor, b: &Tensor| {
            Tensor::concat(&[a, b], 1).unwrap()
        }),
        OpKind::IndexSelect => unary!(param(rng, &[3, 4]), (), |x: &Tensor| x.index_select(0, &[2, 0, 2]).unwrap()),
        OpKind::NormLast => unary!(param_off_zero(rng, &[4, 3]), (), |x: &Tensor| x.norm_last().unwrap()),
        OpKind::Sum => {
            let x = param(rng, &[3, 4]);
            let c = rng.gen_range(0.5..2.0);
            let entries = every_entry(std::slice::from_ref(&x));
            (entries, Box::new(move || x.sum().scale(c)))
        }
        OpKind::Mean => {
            let x = param(rng, &[3, 4]);
            let c = rng.gen_range(0.5..2.0);
            let entries = every_entry(std::slice::from_ref(&x));
            (entries, Box::new(move || x.mean().scale(c)))
        }
    }
}

/// Adds `U(-0.1, 0.1)` to every entry so that no bias sits exactly at a
/// `relu` kink.
fn jitter(params: &[Tensor], rng: &mut ChaCha8Rng) {
    for p in params {
        for v in p.data_mut().iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
}

fn chain_topology(n: usize) -> SkeletonTopology {
    let names = (0..n).map(|i| format!("j{i}")).collect();
    let parents = (0..n).map(|i| i.checked_sub(1)).collect();
    SkeletonTopology::new(names, parents).expect("chain is a valid topology")
}

fn tiny_encoder(rng: &mut ChaCha8Rng, joints: usize) -> EncoderModel {
    let cfg = EncoderConfig {
        num_layers: 2,
        num_heads: 2,
        model_dim: 8,
        ff_dim: 8,
        input_dim: 3 * joints,
        history_len: 4,
        predict_delta: false,
        position_scale: 1.0,
    };
    let model = EncoderModel::new(cfg, rng).expect("valid config");
    jitter(&model.parameters(), rng);
    model
}

fn tiny_disc(rng: &mut ChaCha8Rng, joints: usize) -> DiscriminatorModel {
    let cfg = DiscriminatorConfig {
        input_dim: 3 * joints,
        hidden_dims: vec![6, 5],
        delta_scale: 1.0,
    };
    let model = DiscriminatorModel::new(cfg, rng).expect("valid config");
    jitter(&model.parameters(), rng);
    model
}

const COMPOSITES: [&str; 6] = [
    "attention_block",
    "predict_next_mpjpe",
    "discriminator_score",
    "generator_adversarial_loss",
    "total_loss_predict_next",
    "total_loss_rollout",
];

fn composite_instance(name: &str, rng: &mut ChaCha8Rng) -> Instance {
    const J: usize = 3;
    match name {
        "attention_block" => {
            let block = AttentionBlock::new(4, 6, 2, rng);
            jitter(&block.parameters().into_iter().cloned().collect::<Vec<_>>(), rng);
            let x = param(rng, &[5, 4]);
            let w = constant(rng, &[5, 4]);
            let mut params: Vec<Tensor> = block.parameters().into_iter().cloned().collect();
            params.push(x.clone());
            (every_entry(&params), Box::new(move || weighted(block.forward(&x).unwrap(), &w)))
        }
        "predict_next_mpjpe" => {
            let model = tiny_encoder(rng, J);
            let h = constant(rng, &[4, J, 3]);
            let truth = constant(rng, &[1, J, 3]);
            let entries = sampled_entries(&model.parameters(), 20, rng);
            (
                entries,
                Box::new(move || {
                    let p = model.predict_next(&h).unwrap().reshape(&[1, J, 3]).unwrap();
                    mpjpe(&p, &truth).unwrap()
                }),
            )
        }
        "discriminator_score" => {
            let d = tiny_disc(rng, J);
            let x = constant(rng, &[6, J, 3]);
            let entries = sampled_entries(&d.parameters(), 20, rng);
            (entries, Box::new(move || d.score(&x).unwrap().sum()))
        }
        "generator_adversarial_loss" => {
            let d = tiny_disc(rng, J);
            let fake = param(rng, &[4, J, 3]);
            let entries = every_entry(std::slice::from_ref(&fake));
            (entries, Box::new(move || generator_adversarial_loss(&d, &fake).unwrap()))
        }
        "total_loss_predict_next" | "total_loss_rollout" => {
            let frames = if name == "total_loss_rollout" { 3 } else { 1 };
            let model = tiny_encoder(rng, J);
            let d = tiny_disc(rng, J);
            let topo = chain_topology(J);
            let h = constant(rng, &[4, J, 3]);
            let last = h.narrow(0, 3, 1).unwrap().reshape(&[J, 3]).unwrap();
            let truth = constant(rng, &[frames, J, 3]);
            let entries = sampled_entries(&model.parameters(), 20, rng);
            let weights = LossWeights {
                lambda_bone: 0.5,
                lambda_adv: 0.5,
            };
            (
                entries,
                Box::new(move || {
                    let pred = model.rollout(&h, frames).unwrap();
                    total_loss(&pred, &truth, &topo, &d, &weights, &last, LossNorm::L2)
                        .unwrap()
                        .total
                }),
            )
        }
        other => unreachable!("unknown composite check {other}"),
    }
}

/// Names of every check, operations first.
pub fn check_names() -> Vec<String> {
    OpKind::ALL
        .iter()
        .map(|k| k.name().to_owned())
        .chain(COMPOSITES.iter().map(|s| (*s).to_owned()))
        .collect()
}

/// Runs every check. Each has its own random stream derived from the seed.
pub fn run_suite(opts: &GradcheckOptions) -> Vec<CheckResult> {
    check_names()
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(i as u64);
            let mut worst: f64 = 0.0;
            for k in 0..opts.instances {
                let (entries, f) = match OpKind::from_name(&name) {
                    Some(kind) => op_instance(kind, k, &mut rng),
                    None => composite_instance(&name, &mut rng),
                };
                worst = worst.max(max_rel_err(&entries, &*f, opts.step, opts.floor));
            }
            CheckResult {
                passed: worst < opts.tolerance,
                name,
                worst_rel_err: worst,
                instances: opts.instances,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::corrupt_backward_rule;

    #[test]
    fn fresh_build_passes_every_check() {
        let results = run_suite(&GradcheckOptions::default());
        assert_eq!(results.len(), OpKind::ALL.len() + COMPOSITES.len());
        for r in &results {
            assert!(r.passed, "{} worst rel err {:e}", r.name, r.worst_rel_err);
        }
    }

    #[test]
    fn corrupted_rule_is_caught_by_name() {
        corrupt_backward_rule(Some(OpKind::LayerNorm));
        let results = run_suite(&GradcheckOptions {
            instances: 2,
            ..GradcheckOptions::default()
        });
        corrupt_backward_rule(None);
        let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
        assert!(failed.contains(&"layer_norm"));
        assert!(!failed.contains(&"matmul"));
    }
}
