//! Finite-difference oracle shared by the unit tests.

use crate::tensor::{no_grad, Tensor};

pub(crate) const FD_STEP: f64 = 1e-5;
pub(crate) const FD_FLOOR: f64 = 1e-6;

/// Central differences of `f` with respect to the listed `(parameter,
/// flat index)` entries, compared against the recorded gradients. Returns
/// the worst relative error `|a - n| / max(|a|, |n|, 1e-6)`.
pub(crate) fn fd_max_rel_err_at(entries: &[(Tensor, usize)], f: impl Fn() -> Tensor) -> f64 {
    for (p, _) in entries {
        p.zero_grad();
    }
    f().backward().unwrap();
    let mut worst: f64 = 0.0;
    for (p, i) in entries {
        let i = *i;
        let analytic = p.grad().map_or(0.0, |g| g[i]);
        let orig = p.data()[i];
        p.data_mut()[i] = orig + FD_STEP;
        let up = no_grad(|| f().item().unwrap());
        p.data_mut()[i] = orig - FD_STEP;
        let down = no_grad(|| f().item().unwrap());
        p.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let denom = analytic.abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    worst
}

/// [`fd_max_rel_err_at`] over every entry of every parameter.
pub(crate) fn fd_max_rel_err(params: &[Tensor], f: impl Fn() -> Tensor) -> f64 {
    let entries: Vec<(Tensor, usize)> = params
        .iter()
        .flat_map(|p| (0..p.numel()).map(move |i| (p.clone(), i)))
        .collect();
    fd_max_rel_err_at(&entries, f)
}
