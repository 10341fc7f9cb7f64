//! Training objective: joint position error, bone length error and the
//! generator side of the adversarial term.
//!
//! Position error is the mean Euclidean distance over the `L` predicted
//! frames and `N` joints, normalised by `N·L`.

use serde::{Deserialize, Serialize};

use crate::discriminator::{generator_adversarial_loss, DeltaScorer};
use crate::error::{Error, Result};
use crate::skeleton::SkeletonTopology;
use crate::tensor::{no_grad, Tensor, TensorError};

/// Distance used by the position term of the training objective. The
/// reported metric is always [`LossNorm::L2`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    #[default]
    L2,
    L2Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_bone: f64,
    pub lambda_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_bone: 0.1,
            lambda_adv: 0.01,
        }
    }
}

impl LossWeights {
    /// Position term only.
    pub const MPJPE_ONLY: LossWeights = LossWeights {
        lambda_bone: 0.0,
        lambda_adv: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_bone", self.lambda_bone), ("lambda_adv", self.lambda_adv)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Values of each term. `mpjpe` and `bone` are in millimetres.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mpjpe: f64,
    pub bone: f64,
    pub adversarial: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown {
            mpjpe: sum(|b| b.mpjpe),
            bone: sum(|b| b.bone),
            adversarial: sum(|b| b.adversarial),
            total: sum(|b| b.total),
        }
    }
}

/// The differentiable total together with the value of each term.
#[derive(Debug, Clone)]
pub struct CompositeLoss {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
}

fn check_pair(op: &'static str, pred: &Tensor, truth: &Tensor) -> Result<()> {
    let s = pred.shape();
    if s != truth.shape() || s.len() != 3 || s[2] != 3 {
        return Err(TensorError::Shape {
            op,
            lhs: s.to_vec(),
            rhs: truth.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}

/// Mean per-joint position error of `L × N × 3` arrays.
pub fn mpjpe(pred: &Tensor, truth: &Tensor) -> Result<Tensor> {
    check_pair("mpjpe", pred, truth)?;
    Ok(pred.sub(truth)?.norm_last()?.mean())
}

/// Position term under the chosen norm.
pub fn position_loss(pred: &Tensor, truth: &Tensor, norm: LossNorm) -> Result<Tensor> {
    match norm {
        LossNorm::L2 => mpjpe(pred, truth),
        LossNorm::L2Squared => {
            check_pair("position_loss", pred, truth)?;
            let frames_joints = (pred.shape()[0] * pred.shape()[1]) as f64;
            Ok(pred.sub(truth)?.square().sum().scale(1.0 / frames_joints))
        }
    }
}

fn bone_lengths(x: &Tensor, parents: &[usize], children: &[usize]) -> Result<Tensor> {
    Ok(x.index_select(1, children)?.sub(&x.index_select(1, parents)?)?.norm_last()?)
}

/// Mean over frames and bones of `| |pred bone| - |truth bone| |`.
pub fn bone_loss(pred: &Tensor, truth: &Tensor, topo: &SkeletonTopology) -> Result<Tensor> {
    check_pair("bone_loss", pred, truth)?;
    if pred.shape()[1] != topo.joint_count() {
        return Err(Error::Contract(format!(
            "poses have {} joints, topology has {}",
            pred.shape()[1],
            topo.joint_count()
        )));
    }
    let (parents, children) = topo.bone_index_lists();
    if parents.is_empty() {
        return Err(Error::Contract("topology has no bones".into()));
    }
    let lp = bone_lengths(pred, &parents, &children)?;
    let lt = bone_lengths(truth, &parents, &children)?;
    Ok(lp.sub(&lt)?.abs().mean())
}

/// Frame differences of `[last_observed; frames]`, so the first difference
/// is taken against the final observed pose. `L × N × 3`.
pub fn boundary_deltas(last_observed: &Tensor, frames: &Tensor) -> Result<Tensor> {
    let s = frames.shape();
    if s.len() != 3 || last_observed.shape() != &s[1..] {
        return Err(TensorError::Shape {
            op: "boundary_deltas",
            lhs: last_observed.shape().to_vec(),
            rhs: s.to_vec(),
        }
        .into());
    }
    let l = s[0];
    let anchor = last_observed.reshape(&[1, s[1], s[2]])?;
    let seq = Tensor::concat(&[&anchor, frames], 0)?;
    Ok(seq.narrow(0, 1, l)?.sub(&seq.narrow(0, 0, l)?)?)
}

/// `position + λ_B·bone + λ_D·adversarial`. A term whose weight is zero is
/// left out of the graph but still evaluated for the breakdown.
pub fn total_loss<D: DeltaScorer + ?Sized>(
    pred: &Tensor,
    truth: &Tensor,
    topo: &SkeletonTopology,
    disc: &D,
    weights: &LossWeights,
    last_observed: &Tensor,
    norm: LossNorm,
) -> Result<CompositeLoss> {
    let position = position_loss(pred, truth, norm)?;
    let mut total = position.clone();

    let weighted = |lambda: f64, term: &dyn Fn() -> Result<Tensor>| -> Result<(f64, Option<Tensor>)> {
        if lambda == 0.0 {
            Ok((no_grad(term)?.item()?, None))
        } else {
            let t = term()?;
            Ok((t.item()?, Some(t.scale(lambda))))
        }
    };
    let (bone, bone_term) = weighted(weights.lambda_bone, &|| bone_loss(pred, truth, topo))?;
    if let Some(t) = bone_term {
        total = total.add(&t)?;
    }
    let (adversarial, adv_term) = weighted(weights.lambda_adv, &|| {
        generator_adversarial_loss(disc, &boundary_deltas(last_observed, pred)?)
    })?;
    if let Some(t) = adv_term {
        total = total.add(&t)?;
    }

    let breakdown = LossBreakdown {
        mpjpe: position.item()?,
        bone,
        adversarial,
        total: total.item()?,
    };
    Ok(CompositeLoss { total, breakdown })
}
