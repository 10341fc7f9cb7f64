use super::broadcast::{broadcast_shape, IndexMap};
use super::gemm::gemm;
use super::op::{permute_sources, split_axis};
use super::{numel_of, Op, Result, Tensor, TensorError};

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl Tensor {
    fn check_axis(&self, op: &'static str, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return Err(TensorError::Axis {
                op,
                axis,
                shape: self.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Matrix product over the last two axes, broadcasting leading batch axes.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (ash, bsh) = (self.shape(), other.shape());
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(shape_err("matmul", ash, bsh));
        }
        let (ra, rb) = (ash.len(), bsh.len());
        let (m, k, k2, n) = (ash[ra - 2], ash[ra - 1], bsh[rb - 2], bsh[rb - 1]);
        if k != k2 {
            return Err(shape_err("matmul", ash, bsh));
        }
        let (batch_a, batch_b) = (&ash[..ra - 2], &bsh[..rb - 2]);
        let batch = broadcast_shape(batch_a, batch_b).ok_or_else(|| shape_err("matmul", ash, bsh))?;
        let nb = numel_of(&batch);
        let ma = IndexMap::new(&batch, batch_a);
        let mb = IndexMap::new(&batch, batch_b);
        let mut out = vec![0.0; nb * m * n];
        {
            let (ad, bd) = (self.data(), other.data());
            for bi in 0..nb {
                let (ia, ib) = (ma.get(bi) * m * k, mb.get(bi) * k * n);
                gemm(m, k, n, &ad[ia..], false, &bd[ib..], false, &mut out[bi * m * n..], 0.0);
            }
        }
        let mut shape = batch;
        shape.extend([m, n]);
        Ok(Tensor::from_op(out, shape, Op::MatMul, &[self, other]))
    }

    fn zip_with(&self, other: &Tensor, op_name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ash, bsh) = (self.shape(), other.shape());
        let shape = broadcast_shape(ash, bsh).ok_or_else(|| shape_err(op_name, ash, bsh))?;
        let out = {
            let (a, b) = (self.data(), other.data());
            if ash == bsh {
                a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
            } else {
                let ma = IndexMap::new(&shape, ash);
                let mb = IndexMap::new(&shape, bsh);
                (0..numel_of(&shape)).map(|i| f(a[ma.get(i)], b[mb.get(i)])).collect()
            }
        };
        Ok(Tensor::from_op(out, shape, op, &[self, other]))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", Op::Sub, |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", Op::Mul, |a, b| a * b)
    }

    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let out = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(out, self.shape().to_vec(), op, &[self])
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(Op::Scale(c), |x| x * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map(Op::AddScalar, |x| x + c)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Tensor {
        self.map(Op::Relu, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn abs(&self) -> Tensor {
        self.map(Op::Abs, f64::abs)
    }

    pub fn square(&self) -> Tensor {
        self.map(Op::Square, |x| x * x)
    }

    /// Softmax along `axis`, shifted by the running max so large inputs
    /// neither overflow nor produce NaN.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        self.check_axis("softmax", axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let max = (0..len).map(|j| x[base + j * inner]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (x[base + j * inner] - max).exp();
                    y[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    y[base + j * inner] /= sum;
                }
            }
        }
        drop(x);
        Ok(Tensor::from_op(y, self.shape().to_vec(), Op::Softmax { axis }, &[self]))
    }

    /// Normalizes each vector along the last axis to zero mean and unit
    /// (biased) variance, then applies `gain * xhat + bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self.shape().last().ok_or_else(|| shape_err("layer_norm", self.shape(), gain.shape()))?;
        if gain.shape() != [d] {
            return Err(shape_err("layer_norm", self.shape(), gain.shape()));
        }
        if bias.shape() != [d] {
            return Err(shape_err("layer_norm", self.shape(), bias.shape()));
        }
        let x = self.data();
        let (gd, bd) = (gain.data(), bias.data());
        let rows = x.len() / d;
        let mut y = vec![0.0; x.len()];
        let mut stats = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                y[r * d + j] = (row[j] - mean) * rstd * gd[j] + bd[j];
            }
            stats.push((mean, rstd));
        }
        drop((x, gd, bd));
        Ok(Tensor::from_op(y, self.shape().to_vec(), Op::LayerNorm { stats }, &[self, gain, bias]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() || shape.contains(&0) {
            return Err(shape_err("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), Op::Reshape, &[self]))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        let valid = axes.len() == rank
            && axes.iter().all(|&a| {
                let ok = a < rank && !seen[a];
                if ok {
                    seen[a] = true;
                }
                ok
            });
        if !valid {
            return Err(shape_err("permute", self.shape(), axes));
        }
        let sources = permute_sources(self.shape(), axes);
        let x = self.data();
        let out = sources.iter().map(|&s| x[s]).collect();
        drop(x);
        let shape = axes.iter().map(|&a| self.shape()[a]).collect();
        Ok(Tensor::from_op(out, shape, Op::Permute { axes: axes.to_vec() }, &[self]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Tensor> {
        let rank = self.rank();
        if rank < 2 {
            return Err(TensorError::Axis {
                op: "transpose",
                axis: 1,
                shape: self.shape().to_vec(),
            });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(&axes)
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        self.check_axis("narrow", axis)?;
        let extent = self.shape()[axis];
        if len == 0 || start + len > extent {
            return Err(TensorError::Contract(format!(
                "narrow: range {start}..{} outside axis {axis} of shape {:?}",
                start + len,
                self.shape()
            )));
        }
        let (outer, _, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = (o * extent + start) * inner;
            out.extend_from_slice(&x[src..src + len * inner]);
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(out, shape, Op::Narrow { axis, start }, &[self]))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| TensorError::Contract("concat of an empty list".into()))?;
        first.check_axis("concat", axis)?;
        let base = first.shape();
        let mut total = 0;
        for t in tensors {
            let s = t.shape();
            let compatible = s.len() == base.len() && s.iter().zip(base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        let datas: Vec<_> = tensors.iter().map(|t| t.data()).collect();
        for o in 0..outer {
            for (t, d) in tensors.iter().zip(&datas) {
                let len = t.shape()[axis] * inner;
                out.extend_from_slice(&d[o * len..(o + 1) * len]);
            }
        }
        drop(datas);
        let mut shape = base.to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(out, shape, Op::Concat { axis }, tensors))
    }

    /// Gathers the given positions along `axis` (indices may repeat).
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        self.check_axis("index_select", axis)?;
        let extent = self.shape()[axis];
        if indices.is_empty() {
            return Err(TensorError::Contract("index_select: empty index list".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= extent) {
            return Err(TensorError::Contract(format!(
                "index_select: index {bad} out of range for axis {axis} of shape {:?}",
                self.shape()
            )));
        }
        let (outer, _, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &idx in indices {
                let src = (o * extent + idx) * inner;
                out.extend_from_slice(&x[src..src + inner]);
            }
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        shape[axis] = indices.len();
        Ok(Tensor::from_op(
            out,
            shape,
            Op::IndexSelect {
                axis,
                indices: indices.to_vec(),
            },
            &[self],
        ))
    }

    /// Euclidean norm over the last axis, which is removed. The backward rule
    /// passes zero gradient where the norm is exactly zero.
    pub fn norm_last(&self) -> Result<Tensor> {
        let k = *self
            .shape()
            .last()
            .ok_or_else(|| TensorError::Contract("norm_last on a scalar".into()))?;
        let x = self.data();
        let out = x.chunks_exact(k).map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        drop(x);
        let shape = self.shape()[..self.rank() - 1].to_vec();
        Ok(Tensor::from_op(out, shape, Op::NormLast, &[self]))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(vec![s], Vec::new(), Op::Sum, &[self])
    }

    pub fn mean(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(vec![s / self.numel() as f64], Vec::new(), Op::Mean, &[self])
    }
}
