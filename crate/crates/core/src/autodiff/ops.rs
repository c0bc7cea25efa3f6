//! Differentiable primitives. Every method computes its value eagerly and
//! records a node when any operand is attached.

use std::rc::Rc;

use super::kernels::{self, numel, Window};
use super::tensor::{Op, Tensor};
use crate::error::{Error, Result};

impl Tensor {
    fn binary(&self, other: &Tensor, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let shape = kernels::broadcast_shape(&self.shape, &other.shape)
            .ok_or_else(|| Error::dim(name, &self.shape, &other.shape))?;
        let data = kernels::binary(&self.data, &self.shape, &other.data, &other.shape, &shape, f);
        Tensor::record(op, &[self, other], &shape, data)
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data = self.data.iter().map(|&x| f(x)).collect();
        Tensor::record(op, &[self], &self.shape.clone(), data)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Add, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Sub, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Mul, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Div, "div", |a, b| a / b)
    }

    /// `scale * self + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Tensor> {
        self.unary(Op::Affine(scale), |x| scale * x + shift)
    }

    pub fn scale(&self, s: f64) -> Result<Tensor> {
        self.affine(s, 0.0)
    }

    pub fn add_scalar(&self, s: f64) -> Result<Tensor> {
        self.affine(1.0, s)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.affine(-1.0, 0.0)
    }

    pub fn pow(&self, p: f64) -> Result<Tensor> {
        self.unary(Op::Pow(p), |x| x.powf(p))
    }

    pub fn square(&self) -> Result<Tensor> {
        self.mul(self)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn log(&self) -> Result<Tensor> {
        self.unary(Op::Log, f64::ln)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.unary(Op::Sqrt, f64::sqrt)
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary(Op::Sigmoid, sigmoid)
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.unary(Op::Relu, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn elu(&self, alpha: f64) -> Result<Tensor> {
        self.unary(Op::Elu(alpha), |x| if x > 0.0 { x } else { alpha * x.exp_m1() })
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&self) -> Result<Tensor> {
        self.mul(&self.sigmoid()?)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) @ op(other)` for 2-D operands, `op` transposing when the
    /// flag is set. Transposes are folded into the kernel's strides.
    pub fn matmul_t(&self, other: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let (m, k) = if ta {
            (self.shape[1], self.shape[0])
        } else {
            (self.shape[0], self.shape[1])
        };
        let (k2, n) = if tb {
            (other.shape[1], other.shape[0])
        } else {
            (other.shape[0], other.shape[1])
        };
        if k != k2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let data = kernels::matmul(&self.data, &other.data, m, k, n, ta, tb);
        Tensor::record(Op::MatMul { ta, tb }, &[self, other], &[m, n], data)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        Tensor::record_rc(Op::Reshape, &[self], shape, self.data.clone())
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let mut seen = vec![false; perm.len()];
        let valid = perm.len() == self.shape.len()
            && perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::dim("permute", &self.shape, perm));
        }
        let (data, shape) = kernels::permute(&self.data, &self.shape, perm);
        Tensor::record(Op::Permute(perm.to_vec()), &[self], &shape, data)
    }

    /// Swap the two axes of a matrix.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::dim("transpose", &self.shape, &[2]));
        }
        self.permute(&[1, 0])
    }

    pub fn sum(&self) -> Result<Tensor> {
        let s = self.data.iter().sum();
        Tensor::record(Op::SumAll, &[self], &[], vec![s])
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.len().max(1) as f64;
        self.sum()?.scale(1.0 / n)
    }

    fn check_axis(&self, axis: usize, op: &'static str) -> Result<()> {
        if axis >= self.shape.len() {
            Err(Error::dim(op, &self.shape, &[axis]))
        } else {
            Ok(())
        }
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.check_axis(axis, "sum_axis")?;
        let data = kernels::sum_axis(&self.data, &self.shape, axis);
        let mut shape = self.shape.to_vec();
        shape.remove(axis);
        Tensor::record(Op::SumAxis(axis), &[self], &shape, data)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        self.check_axis(axis, "mean_axis")?;
        let n = self.shape[axis] as f64;
        self.sum_axis(axis)?.scale(1.0 / n)
    }

    /// Max over `axis`, removing it. The gradient flows to the first
    /// maximal element on ties.
    pub fn max_axis(&self, axis: usize) -> Result<Tensor> {
        self.check_axis(axis, "max_axis")?;
        if self.shape[axis] == 0 {
            return Err(Error::dim("max_axis", &self.shape, &[axis]));
        }
        let (data, mask) = kernels::max_axis(&self.data, &self.shape, axis);
        let mut shape = self.shape.to_vec();
        shape.remove(axis);
        Tensor::record(Op::MaxAxis(axis, Rc::new(mask)), &[self], &shape, data)
    }

    /// Max over every element.
    pub fn max_reduce(&self) -> Result<Tensor> {
        self.reshape(&[self.len()])?.max_axis(0)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        match kernels::broadcast_shape(&self.shape, shape) {
            Some(s) if s == shape => {}
            _ => return Err(Error::dim("broadcast_to", &self.shape, shape)),
        }
        let data = kernels::broadcast_to(&self.data, &self.shape, shape);
        Tensor::record(Op::BroadcastTo, &[self], shape, data)
    }

    /// Sum away broadcast axes so the result has `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor> {
        if *self.shape == *shape {
            return Ok(self.clone());
        }
        match kernels::broadcast_shape(shape, &self.shape) {
            Some(s) if *s == *self.shape => {}
            _ => return Err(Error::dim("sum_to", &self.shape, shape)),
        }
        let data = kernels::sum_to(&self.data, &self.shape, shape);
        Tensor::record(Op::SumTo, &[self], shape, data)
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        self.check_axis(axis, "slice")?;
        if start > end || end > self.shape[axis] {
            return Err(Error::dim("slice", &self.shape, &[axis, start, end]));
        }
        let data = kernels::slice_axis(&self.data, &self.shape, axis, start, end);
        let mut shape = self.shape.to_vec();
        shape[axis] = end - start;
        Tensor::record(Op::Slice { axis, start }, &[self], &shape, data)
    }

    /// Adjoint of [`Tensor::slice`]: zeros of length `full` along `axis`
    /// with `self` placed at `start`.
    pub fn embed(&self, axis: usize, start: usize, full: usize) -> Result<Tensor> {
        self.check_axis(axis, "embed")?;
        if start + self.shape[axis] > full {
            return Err(Error::dim("embed", &self.shape, &[axis, start, full]));
        }
        let data = kernels::embed_axis(&self.data, &self.shape, axis, start, full);
        let mut shape = self.shape.to_vec();
        shape[axis] = full;
        Tensor::record(Op::Embed { axis, start }, &[self], &shape, data)
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        first.check_axis(axis, "concat")?;
        let mut shape = first.shape.to_vec();
        shape[axis] = 0;
        for p in parts {
            let compatible = p.shape.len() == first.shape.len()
                && p.shape.iter().zip(first.shape.iter()).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", &first.shape, &p.shape));
            }
            shape[axis] += p.shape[axis];
        }
        let (outer, _, inner) = kernels::split_at_axis(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let w = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * w..(o + 1) * w]);
            }
        }
        Tensor::record(Op::Concat { axis }, parts, &shape, data)
    }

    fn window_dims(&self, op: &'static str, kernel: usize, stride: usize, padding: usize) -> Result<(Window, usize, usize, usize, usize)> {
        if self.shape.len() != 3 {
            return Err(Error::dim(op, &self.shape, &[kernel, stride, padding]));
        }
        let w = Window {
            kernel,
            stride,
            padding,
        };
        let (b, c, l) = (self.shape[0], self.shape[1], self.shape[2]);
        let lo = match w.out_len(l) {
            Some(lo) if kernel >= 1 => lo,
            _ => return Err(Error::dim(op, &self.shape, &[kernel, stride, padding])),
        };
        Ok((w, b, c, l, lo))
    }

    /// `(B, C, L) -> (B, L_out, C*K)` sliding windows with zero padding.
    pub fn im2col(&self, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
        let (w, b, c, l, lo) = self.window_dims("im2col", kernel, stride, padding)?;
        let data = kernels::im2col(&self.data, b, c, l, w);
        Tensor::record(Op::Im2Col(w), &[self], &[b, lo, c * kernel], data)
    }

    /// Adjoint of [`Tensor::im2col`], producing shape `(B, C, len)`.
    pub(crate) fn col2im(&self, chans: usize, len: usize, w: Window) -> Result<Tensor> {
        let b = self.shape[0];
        let data = kernels::col2im(&self.data, b, chans, len, w);
        Tensor::record(Op::Col2Im(w), &[self], &[b, chans, len], data)
    }

    /// 1-D convolution (cross-correlation): `x` is `(B, C_in, L)`, `kernel`
    /// is `(C_out, C_in, K)`; zero padding on both sides.
    pub fn conv1d(&self, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        if kernel.shape.len() != 3 || self.shape.len() != 3 || kernel.shape[1] != self.shape[1] {
            return Err(Error::dim("conv1d", &self.shape, &kernel.shape));
        }
        let (c_out, c_in, k) = (kernel.shape[0], kernel.shape[1], kernel.shape[2]);
        let cols = self.im2col(k, stride, padding)?;
        let (b, lo) = (cols.shape[0], cols.shape[1]);
        let out = cols
            .reshape(&[b * lo, c_in * k])?
            .matmul_t(&kernel.reshape(&[c_out, c_in * k])?, false, true)?;
        out.reshape(&[b, lo, c_out])?.permute(&[0, 2, 1])
    }

    /// Rows of a tensor selected by index along axis 0.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let n = *self.shape.first().ok_or_else(|| Error::dim("gather_rows", &self.shape, &[]))?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::dim("gather_rows", &self.shape, &[bad]));
        }
        let w: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(&self.data[i * w..(i + 1) * w]);
        }
        let mut shape = self.shape.to_vec();
        shape[0] = idx.len();
        Tensor::record(Op::GatherRows(Rc::new(idx.to_vec())), &[self], &shape, data)
    }

    /// Adjoint of [`Tensor::gather_rows`]: add row `k` of `self` into row
    /// `idx[k]` of a zero tensor with `rows` rows.
    pub fn scatter_rows(&self, idx: &[usize], rows: usize) -> Result<Tensor> {
        if self.shape.is_empty() || self.shape[0] != idx.len() || idx.iter().any(|&i| i >= rows) {
            return Err(Error::dim("scatter_rows", &self.shape, &[idx.len(), rows]));
        }
        let w: usize = self.shape[1..].iter().product();
        let mut data = vec![0.0; rows * w];
        for (k, &i) in idx.iter().enumerate() {
            for (d, s) in data[i * w..(i + 1) * w].iter_mut().zip(&self.data[k * w..(k + 1) * w]) {
                *d += s;
            }
        }
        let mut shape = self.shape.to_vec();
        shape[0] = rows;
        Tensor::record(Op::ScatterRows(Rc::new(idx.to_vec())), &[self], &shape, data)
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Tensor> {
        let axis = self
            .shape
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::dim("log_softmax", &self.shape, &[]))?;
        let mut keep = self.shape.to_vec();
        keep[axis] = 1;
        // the shift is a constant; log-sum-exp is invariant to it
        let (m, _) = kernels::max_axis(&self.data, &self.shape, axis);
        let m = Tensor::raw(&keep, m);
        let shifted = self.sub(&m)?;
        let lse = shifted.exp()?.sum_axis(axis)?.log()?.reshape(&keep)?;
        shifted.sub(&lse)
    }

    pub fn softmax(&self) -> Result<Tensor> {
        self.log_softmax()?.exp()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
