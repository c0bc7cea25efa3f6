//! Reverse sweep. Backward rules are written with the same tensor ops as
//! the forward pass, so with `create_graph` the gradient computation is
//! itself recorded and can be differentiated again.

use super::tensor::{Op, Saved, Tape, Tensor};
use crate::error::{Error, Result};

/// Gradients of the scalar `output` with respect to each of `inputs`.
///
/// With `create_graph` the returned tensors are attached to the tape, so
/// they can feed further differentiable computation (unrolled training,
/// Hessian-vector products). Inputs the output does not depend on get a
/// zero gradient.
pub fn grad(output: &Tensor, inputs: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    let node = output
        .node
        .as_ref()
        .ok_or_else(|| Error::Usage("grad of a detached output".into()))?;
    if output.len() != 1 {
        return Err(Error::Usage(format!(
            "grad needs a scalar output, got shape {:?}",
            output.shape()
        )));
    }
    let tape = node.tape.clone();
    let root = node.id;
    let mut wanted = Vec::with_capacity(inputs.len());
    for t in inputs {
        match &t.node {
            Some(n) if n.tape.same(&tape) => wanted.push(n.id),
            Some(_) => return Err(Error::Usage("input belongs to a different tape".into())),
            None => return Err(Error::Usage("grad with respect to a detached tensor".into())),
        }
    }

    // nodes on some path from a wanted input to the root
    let mut live = vec![false; root + 1];
    {
        let nodes = tape.nodes.borrow();
        for &w in &wanted {
            if w <= root {
                live[w] = true;
            }
        }
        for id in 0..=root {
            if !live[id] {
                live[id] = nodes[id].inputs.iter().any(|s| s.id.is_some_and(|i| live[i]));
            }
        }
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; root + 1];
    grads[root] = Some(Tensor::full(output.shape(), 1.0));
    let mut result: Vec<Option<Tensor>> = vec![None; inputs.len()];

    for id in (0..=root).rev() {
        let Some(g) = grads[id].take() else { continue };
        for (slot, &w) in wanted.iter().enumerate() {
            if w == id {
                result[slot] = Some(g.clone());
            }
        }
        let (op, saved_in, saved_out) = {
            let nodes = tape.nodes.borrow();
            let n = &nodes[id];
            if matches!(n.op, Op::Leaf) {
                continue;
            }
            (n.op.clone(), n.inputs.clone(), n.out.clone())
        };
        if !saved_in.iter().any(|s| s.id.is_some_and(|i| live[i])) {
            continue;
        }
        let on = if create_graph { Some(&tape) } else { None };
        let g = if create_graph { g } else { g.detach() };
        let ins: Vec<Tensor> = saved_in.iter().map(|s| Tensor::from_saved(s, on)).collect();
        let out = Tensor::from_saved(&saved_out, on);
        let needed: Vec<bool> = saved_in.iter().map(|s| s.id.is_some_and(|i| live[i])).collect();
        let gin = backward(&op, &ins, &out, &g, &needed, &saved_in)?;
        for ((s, gi), need) in saved_in.iter().zip(gin).zip(&needed) {
            if !need {
                continue;
            }
            let (Some(i), Some(gi)) = (s.id, gi) else { continue };
            grads[i] = Some(match grads[i].take() {
                None => gi,
                Some(acc) => acc.add(&gi)?,
            });
        }
    }

    Ok(result
        .into_iter()
        .zip(inputs)
        .map(|(g, t)| g.unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

fn mask_where(x: &Tensor, pred: impl Fn(f64) -> bool) -> Tensor {
    Tensor::raw(x.shape(), x.data().iter().map(|&v| if pred(v) { 1.0 } else { 0.0 }).collect())
}

fn keepdim_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

fn backward(
    op: &Op,
    ins: &[Tensor],
    out: &Tensor,
    g: &Tensor,
    needed: &[bool],
    saved: &[Saved],
) -> Result<Vec<Option<Tensor>>> {
    let one = |t: Result<Tensor>| t.map(|t| vec![Some(t)]);
    let x = &ins[0];
    match op {
        Op::Leaf => Ok(vec![]),
        Op::Add => Ok(vec![
            Some(g.sum_to(ins[0].shape())?),
            Some(g.sum_to(ins[1].shape())?),
        ]),
        Op::Sub => Ok(vec![
            Some(g.sum_to(ins[0].shape())?),
            if needed[1] { Some(g.neg()?.sum_to(ins[1].shape())?) } else { None },
        ]),
        Op::Mul => Ok(vec![
            if needed[0] { Some(g.mul(&ins[1])?.sum_to(ins[0].shape())?) } else { None },
            if needed[1] { Some(g.mul(&ins[0])?.sum_to(ins[1].shape())?) } else { None },
        ]),
        Op::Div => Ok(vec![
            if needed[0] { Some(g.div(&ins[1])?.sum_to(ins[0].shape())?) } else { None },
            if needed[1] {
                Some(g.mul(out)?.div(&ins[1])?.neg()?.sum_to(ins[1].shape())?)
            } else {
                None
            },
        ]),
        Op::Affine(scale) => one(g.scale(*scale)),
        Op::Pow(p) => one(g.mul(&x.pow(p - 1.0)?.scale(*p)?)),
        Op::Exp => one(g.mul(out)),
        Op::Log => one(g.div(x)),
        Op::Sqrt => one(g.div(out)?.scale(0.5)),
        Op::Tanh => one(g.mul(&out.square()?.affine(-1.0, 1.0)?)),
        Op::Sigmoid => one(g.mul(&out.mul(&out.affine(-1.0, 1.0)?)?)),
        Op::Relu => one(g.mul(&mask_where(x, |v| v > 0.0))),
        Op::Elu(alpha) => {
            let pos = mask_where(x, |v| v > 0.0);
            let neg = mask_where(x, |v| v <= 0.0);
            let d = out.add_scalar(*alpha)?.mul(&neg)?.add(&pos)?;
            one(g.mul(&d))
        }
        Op::MatMul { ta, tb } => {
            let (a, b) = (&ins[0], &ins[1]);
            let ga = if !needed[0] {
                None
            } else if *ta {
                Some(b.matmul_t(g, *tb, true)?)
            } else {
                Some(g.matmul_t(b, false, !tb)?)
            };
            let gb = if !needed[1] {
                None
            } else if *tb {
                Some(g.matmul_t(a, true, *ta)?)
            } else {
                Some(a.matmul_t(g, !ta, false)?)
            };
            Ok(vec![ga, gb])
        }
        Op::Reshape => one(g.reshape(x.shape())),
        Op::Permute(p) => {
            let mut inv = vec![0; p.len()];
            for (i, &d) in p.iter().enumerate() {
                inv[d] = i;
            }
            one(g.permute(&inv))
        }
        Op::SumAll => one(g.reshape(&vec![1; x.shape().len()])?.broadcast_to(x.shape())),
        Op::SumAxis(axis) => one(g.reshape(&keepdim_shape(x.shape(), *axis))?.broadcast_to(x.shape())),
        Op::MaxAxis(axis, mask) => {
            let m = Tensor::raw(x.shape(), mask.as_ref().clone());
            one(g
                .reshape(&keepdim_shape(x.shape(), *axis))?
                .broadcast_to(x.shape())?
                .mul(&m))
        }
        Op::BroadcastTo => one(g.sum_to(x.shape())),
        Op::SumTo => one(g.broadcast_to(x.shape())),
        Op::Slice { axis, start } => one(g.embed(*axis, *start, x.shape()[*axis])),
        Op::Embed { axis, start } => one(g.slice(*axis, *start, start + x.shape()[*axis])),
        Op::Concat { axis } => {
            let mut at = 0;
            saved
                .iter()
                .zip(needed)
                .map(|(s, &need)| {
                    let w = s.shape[*axis];
                    let part = if need { Some(g.slice(*axis, at, at + w)?) } else { None };
                    at += w;
                    Ok(part)
                })
                .collect()
        }
        Op::Im2Col(w) => one(g.col2im(x.shape()[1], x.shape()[2], *w)),
        Op::Col2Im(w) => one(g.im2col(w.kernel, w.stride, w.padding)),
        Op::GatherRows(idx) => one(g.scatter_rows(idx, x.shape()[0])),
        Op::ScatterRows(idx) => one(g.gather_rows(idx)),
    }
}

impl Tape {
    /// Convenience wrapper around [`grad`] for an output on this tape.
    pub fn grad(&self, output: &Tensor, inputs: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
        match output.tape() {
            Some(t) if t.same(self) => grad(output, inputs, create_graph),
            _ => Err(Error::Usage("output is not on this tape".into())),
        }
    }
}
