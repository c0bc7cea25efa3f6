//! Raw numeric kernels behind the tensor ops. Nothing here knows about
//! tapes; shapes are assumed already validated by the caller.

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes, or `None` if incompatible.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside the broadcast shape `out` (0 on
/// broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let lead = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < lead || shape[i - lead] == 1 {
                0
            } else {
                own[i - lead]
            }
        })
        .collect()
}

/// Calls `f(out_index, src_index)` for every element of `out`, where
/// `src_index` is the flat index into a tensor of shape `src` broadcast to
/// `out`.
fn for_each_broadcast(src: &[usize], out: &[usize], mut f: impl FnMut(usize, usize)) {
    let total = numel(out);
    let n = numel(src);
    if n == total && src.len() <= out.len() && src.iter().rev().zip(out.iter().rev()).all(|(a, b)| a == b) {
        (0..total).for_each(|i| f(i, i));
        return;
    }
    if n == 1 {
        (0..total).for_each(|i| f(i, 0));
        return;
    }
    // suffix case: src equals the trailing dims of out
    if src.len() <= out.len() && out[out.len() - src.len()..] == *src {
        for base in (0..total).step_by(n) {
            (0..n).for_each(|j| f(base + j, j));
        }
        return;
    }
    let bs = broadcast_strides(src, out);
    let mut idx = vec![0usize; out.len()];
    let mut s = 0usize;
    for i in 0..total {
        f(i, s);
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            s += bs[d];
            if idx[d] < out[d] {
                break;
            }
            s -= bs[d] * idx[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn binary(
    a: &[f64],
    sa: &[usize],
    b: &[f64],
    sb: &[usize],
    out_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    if sa == sb {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let total = numel(out_shape);
    let is_suffix = |s: &[usize]| s.len() <= out_shape.len() && out_shape[out_shape.len() - s.len()..] == *s;
    // row-broadcast fast paths (e.g. adding a bias to a batch)
    if sa == out_shape && !b.is_empty() && is_suffix(sb) {
        let mut out = Vec::with_capacity(total);
        for chunk in a.chunks(b.len()) {
            out.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
        }
        return out;
    }
    if sb == out_shape && !a.is_empty() && is_suffix(sa) {
        let mut out = Vec::with_capacity(total);
        for chunk in b.chunks(a.len()) {
            out.extend(a.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
        }
        return out;
    }
    // for_each_broadcast visits output indices in order, so pushing is safe
    let mut out = Vec::with_capacity(total);
    if sa == out_shape {
        for_each_broadcast(sb, out_shape, |o, s| out.push(f(a[o], b[s])));
    } else if sb == out_shape {
        for_each_broadcast(sa, out_shape, |o, s| out.push(f(a[s], b[o])));
    } else {
        out.resize(total, 0.0);
        let mut ia = vec![0usize; total];
        for_each_broadcast(sa, out_shape, |o, s| ia[o] = s);
        for_each_broadcast(sb, out_shape, |o, s| out[o] = f(a[ia[o]], b[s]));
    }
    out
}

pub(crate) fn broadcast_to(x: &[f64], shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(numel(out_shape));
    for_each_broadcast(shape, out_shape, |_, s| out.push(x[s]));
    out
}

/// Adjoint of `broadcast_to`: sum `x` (shape `from`) down to `to`.
pub(crate) fn sum_to(x: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; numel(to)];
    for_each_broadcast(to, from, |o, s| out[s] += x[o]);
    out
}

pub(crate) fn permute(x: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = x.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    let mut s = 0usize;
    for _ in 0..total {
        out.push(x[s]);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            s += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            s -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

/// `(outer, axis_len, inner)` view of `shape` around `axis`.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

pub(crate) fn slice_axis(x: &[f64], shape: &[usize], axis: usize, start: usize, end: usize) -> Vec<f64> {
    let (outer, n, inner) = split_at_axis(shape, axis);
    let w = end - start;
    let mut out = Vec::with_capacity(outer * w * inner);
    for o in 0..outer {
        let base = o * n * inner;
        out.extend_from_slice(&x[base + start * inner..base + end * inner]);
    }
    out
}

/// Zero tensor with axis length `full`, with `x` written at `start`.
pub(crate) fn embed_axis(x: &[f64], shape: &[usize], axis: usize, start: usize, full: usize) -> Vec<f64> {
    let (outer, w, inner) = split_at_axis(shape, axis);
    let mut out = vec![0.0; outer * full * inner];
    for o in 0..outer {
        let dst = o * full * inner + start * inner;
        out[dst..dst + w * inner].copy_from_slice(&x[o * w * inner..(o + 1) * w * inner]);
    }
    out
}

pub(crate) fn sum_axis(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = split_at_axis(shape, axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..n {
            let src = &x[(o * n + k) * inner..(o * n + k + 1) * inner];
            for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    out
}

/// Max along `axis` and a one-hot mask marking the first maximal element.
pub(crate) fn max_axis(x: &[f64], shape: &[usize], axis: usize) -> (Vec<f64>, Vec<f64>) {
    let (outer, n, inner) = split_at_axis(shape, axis);
    let mut out = vec![f64::NEG_INFINITY; outer * inner];
    let mut arg = vec![0usize; outer * inner];
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                let v = x[(o * n + k) * inner + i];
                let slot = o * inner + i;
                if v > out[slot] || k == 0 {
                    out[slot] = v;
                    arg[slot] = k;
                }
            }
        }
    }
    let mut mask = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            mask[(o * n + arg[o * inner + i]) * inner + i] = 1.0;
        }
    }
    (out, mask)
}

/// `C = op(A) op(B)` with `op` an optional transpose; `A` is stored
/// `m x k` (or `k x m` when transposed), likewise `B`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, ta: bool, tb: bool) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices are sized m*k, k*n and m*n and the strides describe
    // exactly those row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        if padded < self.kernel || self.stride == 0 {
            None
        } else {
            Some((padded - self.kernel) / self.stride + 1)
        }
    }
}

/// `(B, C, L) -> (B, L_out, C*K)`, zero outside the input.
pub(crate) fn im2col(x: &[f64], batch: usize, chans: usize, len: usize, w: Window) -> Vec<f64> {
    let lo = w.out_len(len).unwrap();
    let ck = chans * w.kernel;
    let mut out = vec![0.0; batch * lo * ck];
    for b in 0..batch {
        for o in 0..lo {
            let row = &mut out[(b * lo + o) * ck..(b * lo + o + 1) * ck];
            for c in 0..chans {
                let src = &x[(b * chans + c) * len..(b * chans + c + 1) * len];
                for k in 0..w.kernel {
                    let pos = (o * w.stride + k) as isize - w.padding as isize;
                    if pos >= 0 && (pos as usize) < len {
                        row[c * w.kernel + k] = src[pos as usize];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-add columns back to `(B, C, L)`.
pub(crate) fn col2im(cols: &[f64], batch: usize, chans: usize, len: usize, w: Window) -> Vec<f64> {
    let lo = w.out_len(len).unwrap();
    let ck = chans * w.kernel;
    let mut out = vec![0.0; batch * chans * len];
    for b in 0..batch {
        for o in 0..lo {
            let row = &cols[(b * lo + o) * ck..(b * lo + o + 1) * ck];
            for c in 0..chans {
                let dst = &mut out[(b * chans + c) * len..(b * chans + c + 1) * len];
                for k in 0..w.kernel {
                    let pos = (o * w.stride + k) as isize - w.padding as isize;
                    if pos >= 0 && (pos as usize) < len {
                        dst[pos as usize] += row[c * w.kernel + k];
                    }
                }
            }
        }
    }
    out
}
