use std::fmt;

use super::broadcast::{broadcast_shape, IndexMap};
use super::gemm::gemm;
use super::{numel_of, Tensor};

/// Public name of a recorded operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Relu,
    Abs,
    Square,
    Softmax,
    LayerNorm,
    Reshape,
    Permute,
    Narrow,
    Concat,
    IndexSelect,
    NormLast,
    Sum,
    Mean,
}

impl OpKind {
    pub const ALL: [OpKind; 19] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::Relu,
        OpKind::Abs,
        OpKind::Square,
        OpKind::Softmax,
        OpKind::LayerNorm,
        OpKind::Reshape,
        OpKind::Permute,
        OpKind::Narrow,
        OpKind::Concat,
        OpKind::IndexSelect,
        OpKind::NormLast,
        OpKind::Sum,
        OpKind::Mean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::Relu => "relu",
            OpKind::Abs => "abs",
            OpKind::Square => "square",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Reshape => "reshape",
            OpKind::Permute => "permute",
            OpKind::Narrow => "narrow",
            OpKind::Concat => "concat",
            OpKind::IndexSelect => "index_select",
            OpKind::NormLast => "norm_last",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) enum Op {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar,
    Relu,
    Abs,
    Square,
    Softmax { axis: usize },
    /// Per-row `(mean, 1/sqrt(var + eps))`.
    LayerNorm { stats: Vec<(f64, f64)> },
    Reshape,
    Permute { axes: Vec<usize> },
    Narrow { axis: usize, start: usize },
    Concat { axis: usize },
    IndexSelect { axis: usize, indices: Vec<usize> },
    NormLast,
    Sum,
    Mean,
}

/// `(outer, extent, inner)` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel_of(&shape[..axis]);
    let inner = numel_of(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

/// For each output position of a permutation, the flat input index it reads.
pub(crate) fn permute_sources(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = numel_of(shape);
    let mut sources = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..total {
        sources.push(pos);
        for axis in (0..rank).rev() {
            counter[axis] += 1;
            pos += strides[axis];
            if counter[axis] < out_shape[axis] {
                break;
            }
            pos -= strides[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
    sources
}

impl Op {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::MatMul => OpKind::MatMul,
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Mul => OpKind::Mul,
            Op::Scale(_) => OpKind::Scale,
            Op::AddScalar => OpKind::AddScalar,
            Op::Relu => OpKind::Relu,
            Op::Abs => OpKind::Abs,
            Op::Square => OpKind::Square,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Reshape => OpKind::Reshape,
            Op::Permute { .. } => OpKind::Permute,
            Op::Narrow { .. } => OpKind::Narrow,
            Op::Concat { .. } => OpKind::Concat,
            Op::IndexSelect { .. } => OpKind::IndexSelect,
            Op::NormLast => OpKind::NormLast,
            Op::Sum => OpKind::Sum,
            Op::Mean => OpKind::Mean,
        }
    }

    /// Vector-Jacobian products for each input; `None` where the input does
    /// not require gradients.
    pub(crate) fn backward(&self, inputs: &[Tensor], out: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let wants = |i: usize| inputs[i].requires_grad();
        match self {
            Op::MatMul => matmul_backward(&inputs[0], &inputs[1], g),
            Op::Add | Op::Sub => {
                let sign = if matches!(self, Op::Sub) { -1.0 } else { 1.0 };
                let out_shape = out.shape();
                let ga = wants(0).then(|| IndexMap::new(out_shape, inputs[0].shape()).reduce(g, inputs[0].numel()));
                let gb = wants(1).then(|| {
                    let mut gb = IndexMap::new(out_shape, inputs[1].shape()).reduce(g, inputs[1].numel());
                    if sign < 0.0 {
                        gb.iter_mut().for_each(|v| *v = -*v);
                    }
                    gb
                });
                vec![ga, gb]
            }
            Op::Mul => {
                let out_shape = out.shape();
                let (a, b) = (inputs[0].data(), inputs[1].data());
                let ma = IndexMap::new(out_shape, inputs[0].shape());
                let mb = IndexMap::new(out_shape, inputs[1].shape());
                let ga = wants(0).then(|| {
                    let mut acc = vec![0.0; a.len()];
                    for (i, gi) in g.iter().enumerate() {
                        acc[ma.get(i)] += gi * b[mb.get(i)];
                    }
                    acc
                });
                let gb = wants(1).then(|| {
                    let mut acc = vec![0.0; b.len()];
                    for (i, gi) in g.iter().enumerate() {
                        acc[mb.get(i)] += gi * a[ma.get(i)];
                    }
                    acc
                });
                vec![ga, gb]
            }
            Op::Scale(c) => vec![Some(g.iter().map(|v| v * c).collect())],
            Op::AddScalar | Op::Reshape => vec![Some(g.to_vec())],
            Op::Relu => {
                let x = inputs[0].data();
                vec![Some(g.iter().zip(x.iter()).map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 }).collect())]
            }
            Op::Abs => {
                let x = inputs[0].data();
                vec![Some(
                    g.iter()
                        .zip(x.iter())
                        .map(|(gi, &xi)| {
                            if xi > 0.0 {
                                *gi
                            } else if xi < 0.0 {
                                -*gi
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                )]
            }
            Op::Square => {
                let x = inputs[0].data();
                vec![Some(g.iter().zip(x.iter()).map(|(gi, xi)| 2.0 * xi * gi).collect())]
            }
            Op::Softmax { axis } => {
                let y = out.data();
                let (outer, len, inner) = split_axis(out.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let dot: f64 = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..len {
                            let idx = base + j * inner;
                            dx[idx] = y[idx] * (g[idx] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::LayerNorm { stats } => layer_norm_backward(inputs, stats, g),
            Op::Permute { axes } => {
                let sources = permute_sources(inputs[0].shape(), axes);
                let mut dx = vec![0.0; g.len()];
                for (i, &src) in sources.iter().enumerate() {
                    dx[src] = g[i];
                }
                vec![Some(dx)]
            }
            Op::Narrow { axis, start } => {
                let (outer, len, inner) = split_axis(inputs[0].shape(), *axis);
                let out_len = out.shape()[*axis];
                let mut dx = vec![0.0; inputs[0].numel()];
                for o in 0..outer {
                    let src = o * out_len * inner;
                    let dst = (o * len + start) * inner;
                    dx[dst..dst + out_len * inner].copy_from_slice(&g[src..src + out_len * inner]);
                }
                vec![Some(dx)]
            }
            Op::Concat { axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                inputs
                    .iter()
                    .map(|t| {
                        let len = t.shape()[*axis];
                        let gi = t.requires_grad().then(|| {
                            let mut dx = Vec::with_capacity(t.numel());
                            for o in 0..outer {
                                let src = (o * total + offset) * inner;
                                dx.extend_from_slice(&g[src..src + len * inner]);
                            }
                            dx
                        });
                        offset += len;
                        gi
                    })
                    .collect()
            }
            Op::IndexSelect { axis, indices } => {
                let (outer, len, inner) = split_axis(inputs[0].shape(), *axis);
                let k = indices.len();
                let mut dx = vec![0.0; inputs[0].numel()];
                for o in 0..outer {
                    for (j, &idx) in indices.iter().enumerate() {
                        let src = (o * k + j) * inner;
                        let dst = (o * len + idx) * inner;
                        for t in 0..inner {
                            dx[dst + t] += g[src + t];
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::NormLast => {
                let x = inputs[0].data();
                let norms = out.data();
                let k = *inputs[0].shape().last().unwrap_or(&1);
                let mut dx = vec![0.0; x.len()];
                for (r, &n) in norms.iter().enumerate() {
                    if n > 0.0 {
                        let s = g[r] / n;
                        for t in 0..k {
                            dx[r * k + t] = s * x[r * k + t];
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::Sum => vec![Some(vec![g[0]; inputs[0].numel()])],
            Op::Mean => {
                let n = inputs[0].numel();
                vec![Some(vec![g[0] / n as f64; n])]
            }
        }
    }
}

fn matmul_backward(a: &Tensor, b: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (ash, bsh) = (a.shape(), b.shape());
    let (ra, rb) = (ash.len(), bsh.len());
    let (m, k, n) = (ash[ra - 2], ash[ra - 1], bsh[rb - 1]);
    let (batch_a, batch_b) = (&ash[..ra - 2], &bsh[..rb - 2]);
    let batch = broadcast_shape(batch_a, batch_b).expect("checked in forward");
    let nb = numel_of(&batch);
    let ma = IndexMap::new(&batch, batch_a);
    let mb = IndexMap::new(&batch, batch_b);
    let (ad, bd) = (a.data(), b.data());

    let ga = a.requires_grad().then(|| {
        let mut ga = vec![0.0; ad.len()];
        for bi in 0..nb {
            let (ia, ib) = (ma.get(bi) * m * k, mb.get(bi) * k * n);
            gemm(m, n, k, &g[bi * m * n..], false, &bd[ib..], true, &mut ga[ia..], 1.0);
        }
        ga
    });
    let gb = b.requires_grad().then(|| {
        let mut gb = vec![0.0; bd.len()];
        for bi in 0..nb {
            let (ia, ib) = (ma.get(bi) * m * k, mb.get(bi) * k * n);
            gemm(k, m, n, &ad[ia..], true, &g[bi * m * n..], false, &mut gb[ib..], 1.0);
        }
        gb
    });
    vec![ga, gb]
}

fn layer_norm_backward(inputs: &[Tensor], stats: &[(f64, f64)], g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let (x, gain) = (inputs[0].data(), inputs[1].data());
    let d = gain.len();
    let mut dx = vec![0.0; x.len()];
    let mut dgain = vec![0.0; d];
    let mut dbias = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    let mut xhat = vec![0.0; d];
    for (r, &(mean, rstd)) in stats.iter().enumerate() {
        let row = &x[r * d..(r + 1) * d];
        let gr = &g[r * d..(r + 1) * d];
        let (mut mean_dxhat, mut mean_dxhat_xhat) = (0.0, 0.0);
        for j in 0..d {
            xhat[j] = (row[j] - mean) * rstd;
            dxhat[j] = gr[j] * gain[j];
            dgain[j] += gr[j] * xhat[j];
            dbias[j] += gr[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xhat[j];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        for j in 0..d {
            dx[r * d + j] = rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
        }
    }
    vec![
        inputs[0].requires_grad().then_some(dx),
        inputs[1].requires_grad().then_some(dgain),
        inputs[2].requires_grad().then_some(dbias),
    ]
}
