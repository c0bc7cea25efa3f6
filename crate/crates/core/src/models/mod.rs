//! The benchmark model families, pooling, sparse masks and checkpoints.
//!
//! A [`Model`] owns plain [`Array`] parameters so it can move between
//! threads. Forward passes lift the parameters into [`Tensor`]s; training
//! code lifts them onto a tape instead via [`forward_tensors`].

mod checkpoint;
mod spec;

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT};
pub use spec::{param_count, Activation, ConvSpec, ModelKind, ModelSpec, Pooling, POOL_WINDOW};

/// Added under the square root of L2 pooling so its gradient is finite
/// on all-zero windows.
const L2_POOL_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Array,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<Param>,
    /// Binary masks aligned with `params`.
    pub masks: Option<Vec<Array>>,
    /// Parameters of a learned activation, when the spec has one.
    pub phi: Option<Box<Model>>,
}

/// `(name, shape, fan_in)`; zero fan-in marks a bias.
fn layout(spec: &ModelSpec) -> Vec<(String, Vec<usize>, usize)> {
    let mut out = Vec::new();
    let dense = |out: &mut Vec<_>, name: &str, i: usize, o: usize| {
        out.push((format!("{name}.weight"), vec![o, i], i));
        out.push((format!("{name}.bias"), vec![o], 0));
    };
    let k = spec.num_classes;
    match spec.kind {
        ModelKind::Logistic => dense(&mut out, "head", spec.input_len, k),
        ModelKind::Mlp | ModelKind::ScalarNet => {
            if spec.kind == ModelKind::ScalarNet {
                out.push(("skip".into(), vec![1], 1));
            }
            let mut prev = spec.input_len;
            for (i, &h) in spec.hidden_sizes.iter().enumerate() {
                dense(&mut out, &format!("fc{i}"), prev, h);
                prev = h;
            }
            dense(&mut out, "head", prev, k);
        }
        ModelKind::Cnn => {
            let c = spec.conv.as_ref().expect("validated cnn spec");
            let mut c_in = 1;
            for (i, &c_out) in c.channels.iter().enumerate() {
                out.push((format!("conv{i}.weight"), vec![c_out, c_in, c.kernel_size], c_in * c.kernel_size));
                out.push((format!("conv{i}.bias"), vec![c_out], 0));
                c_in = c_out;
            }
            let len = spec.conv_lengths().and_then(|l| l.last().copied()).unwrap_or(0);
            dense(&mut out, "head", c_in * len, k);
        }
        ModelKind::Gru => {
            let h = spec.hidden_sizes[0];
            out.push(("gru.w_ih".into(), vec![3 * h, 1], h));
            out.push(("gru.w_hh".into(), vec![3 * h, h], h));
            out.push(("gru.b_ih".into(), vec![3 * h], 0));
            out.push(("gru.b_hh".into(), vec![3 * h], 0));
            dense(&mut out, "head", h, k);
        }
    }
    out
}

/// Fan-in scaled uniform weights `U(-a, a)`, `a = sqrt(1 / fan_in)`, and
/// zero biases, drawn from the spec's `init_seed`.
///
/// GRU weights use `fan_in = hidden`, the usual recurrent convention.
pub fn init_model(spec: &ModelSpec) -> Result<Model> {
    spec.validate()?;
    let mut rng = RngStream::derive(spec.init_seed, &[0x1417]);
    let params = layout(spec)
        .into_iter()
        .map(|(name, shape, fan_in)| {
            let mut value = Array::zeros(&shape);
            if fan_in > 0 {
                let a = (1.0 / fan_in as f64).sqrt();
                value.data_mut().iter_mut().for_each(|v| *v = rng.uniform_range(-a, a));
            }
            Param { name, value }
        })
        .collect();
    let phi = match &spec.activation {
        Activation::Learned(phi_spec) => Some(Box::new(init_model(phi_spec)?)),
        _ => None,
    };
    Ok(Model {
        spec: spec.clone(),
        params,
        masks: None,
        phi,
    })
}

impl Model {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Array> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| Tensor::from_array(&p.value)).collect()
    }

    /// Logits for a `(batch, input_len)` input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let phi = self.phi.as_ref().map(|m| m.param_tensors());
        forward_tensors(&self.spec, &self.param_tensors(), phi.as_deref(), x)
    }

    pub fn forward_array(&self, x: &Array) -> Result<Array> {
        Ok(self.forward(&Tensor::from_array(x))?.to_array())
    }

    /// Install masks and zero the masked parameters.
    pub fn set_mask(&mut self, masks: Vec<Array>) -> Result<()> {
        if masks.len() != self.params.len() {
            return Err(Error::dim("set_mask", &[self.params.len()], &[masks.len()]));
        }
        for (p, m) in self.params.iter().zip(&masks) {
            if p.value.shape() != m.shape() {
                return Err(Error::dim("set_mask", p.value.shape(), m.shape()));
            }
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Data(format!("mask for {} is not binary", p.name)));
            }
        }
        self.masks = Some(masks);
        self.apply_mask();
        Ok(())
    }

    /// `params <- params * masks`; a no-op without masks.
    pub fn apply_mask(&mut self) {
        if let Some(masks) = &self.masks {
            for (p, m) in self.params.iter_mut().zip(masks) {
                for (v, &keep) in p.value.data_mut().iter_mut().zip(m.data()) {
                    if keep == 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
    }

    /// Copy of the model with masks removed (values untouched).
    pub fn unmasked(&self) -> Model {
        Model {
            masks: None,
            ..self.clone()
        }
    }
}

/// Forward pass with explicit parameter tensors in [`Model::params`] order.
/// `phi` holds the learned activation's parameters, if the spec uses one.
pub fn forward_tensors(spec: &ModelSpec, params: &[Tensor], phi: Option<&[Tensor]>, x: &Tensor) -> Result<Tensor> {
    let expected = layout(spec);
    if params.len() != expected.len() {
        return Err(Error::dim("forward", &[expected.len()], &[params.len()]));
    }
    for (p, (_, shape, _)) in params.iter().zip(&expected) {
        if p.shape() != shape.as_slice() {
            return Err(Error::dim("forward", shape, p.shape()));
        }
    }
    if x.shape().len() != 2 || x.shape()[1] != spec.input_len {
        return Err(Error::dim("forward", x.shape(), &[spec.input_len]));
    }
    let act = ActivationFn::new(&spec.activation, phi)?;
    match spec.kind {
        ModelKind::Logistic => dense(x, &params[0], &params[1]),
        ModelKind::Mlp => {
            let mut h = x.clone();
            for layer in params[..params.len() - 2].chunks(2) {
                h = act.apply(&dense(&h, &layer[0], &layer[1])?)?;
            }
            dense(&h, &params[params.len() - 2], &params[params.len() - 1])
        }
        ModelKind::ScalarNet => {
            let mut h = x.clone();
            for layer in params[1..params.len() - 2].chunks(2) {
                h = act.apply(&dense(&h, &layer[0], &layer[1])?)?;
            }
            let out = dense(&h, &params[params.len() - 2], &params[params.len() - 1])?;
            out.add(&x.mul(&params[0])?)
        }
        ModelKind::Cnn => cnn_forward(spec, params, &act, x),
        ModelKind::Gru => gru_forward(spec, params, x),
    }
}

fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    x.matmul_t(w, false, true)?.add(b)
}

fn cnn_forward(spec: &ModelSpec, params: &[Tensor], act: &ActivationFn, x: &Tensor) -> Result<Tensor> {
    let c = spec.conv.as_ref().expect("validated cnn spec");
    let batch = x.shape()[0];
    let mut h = x.reshape(&[batch, 1, spec.input_len])?;
    for layer in params[..params.len() - 2].chunks(2) {
        let c_out = layer[0].shape()[0];
        h = h.conv1d(&layer[0], c.stride, c.padding())?.add(&layer[1].reshape(&[1, c_out, 1])?)?;
        h = pool(&act.apply(&h)?, spec.pooling, POOL_WINDOW, POOL_WINDOW)?;
    }
    let flat = h.len() / batch;
    let h = h.reshape(&[batch, flat])?;
    dense(&h, &params[params.len() - 2], &params[params.len() - 1])
}

/// Gated recurrent unit reading one scalar per step, left to right, from a
/// zero initial state:
///
/// ```text
/// r, z = sigmoid(W_i[r,z] x + b_i[r,z] + W_h[r,z] h + b_h[r,z])
/// n    = tanh(W_in x + b_in + r * (W_hn h + b_hn))
/// h'   = (1 - z) * n + z * h
/// ```
fn gru_forward(spec: &ModelSpec, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
    let hidden = spec.hidden_sizes[0];
    let batch = x.shape()[0];
    // split the stacked (r, z, n) weights once instead of slicing every step
    let gate = |p: &Tensor, g: usize| p.slice(0, g * hidden, (g + 1) * hidden);
    let (w_ih, w_hh, b_ih, b_hh) = (&params[0], &params[1], &params[2], &params[3]);
    let w_i: Vec<Tensor> = (0..3).map(|g| gate(w_ih, g)).collect::<Result<_>>()?;
    let w_h: Vec<Tensor> = (0..3).map(|g| gate(w_hh, g)).collect::<Result<_>>()?;
    let b_r = gate(b_ih, 0)?.add(&gate(b_hh, 0)?)?;
    let b_z = gate(b_ih, 1)?.add(&gate(b_hh, 1)?)?;
    let (b_in, b_hn) = (gate(b_ih, 2)?, gate(b_hh, 2)?);
    let mut h = Tensor::zeros(&[batch, hidden]);
    for t in 0..spec.input_len {
        let xt = x.slice(1, t, t + 1)?;
        let hw = |g: usize| h.matmul_t(&w_h[g], false, true);
        let xw = |g: usize| xt.matmul_t(&w_i[g], false, true);
        let r = xw(0)?.add(&hw(0)?)?.add(&b_r)?.sigmoid()?;
        let z = xw(1)?.add(&hw(1)?)?.add(&b_z)?.sigmoid()?;
        let n = xw(2)?.add(&b_in)?.add(&r.mul(&hw(2)?.add(&b_hn)?)?)?.tanh()?;
        // (1 - z) n + z h  ==  n + z (h - n)
        h = n.add(&z.mul(&h.sub(&n)?)?)?;
    }
    dense(&h, &params[4], &params[5])
}

enum ActivationFn<'a> {
    Relu,
    Elu,
    Tanh,
    Swish,
    Learned(&'a ModelSpec, &'a [Tensor]),
}

impl<'a> ActivationFn<'a> {
    fn new(a: &'a Activation, phi: Option<&'a [Tensor]>) -> Result<Self> {
        Ok(match a {
            Activation::Relu => ActivationFn::Relu,
            Activation::Elu => ActivationFn::Elu,
            Activation::Tanh => ActivationFn::Tanh,
            Activation::Swish => ActivationFn::Swish,
            Activation::Learned(spec) => {
                let p = phi.ok_or_else(|| Error::Usage("learned activation without its parameters".into()))?;
                ActivationFn::Learned(spec, p)
            }
        })
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            ActivationFn::Relu => x.relu(),
            ActivationFn::Elu => x.elu(1.0),
            ActivationFn::Tanh => x.tanh(),
            ActivationFn::Swish => x.swish(),
            ActivationFn::Learned(spec, p) => {
                let col = x.reshape(&[x.len(), 1])?;
                forward_tensors(spec, p, None, &col)?.reshape(x.shape())
            }
        }
    }
}

/// Apply a fixed (non-learned) activation elementwise.
pub fn activate(a: &Activation, x: &Tensor) -> Result<Tensor> {
    ActivationFn::new(a, None)?.apply(x)
}

/// Windowed reduction over the last axis of a `(B, C, L)` tensor.
/// `Pooling::None` is the identity.
pub fn pool(x: &Tensor, kind: Pooling, window: usize, stride: usize) -> Result<Tensor> {
    if kind == Pooling::None {
        return Ok(x.clone());
    }
    let s = x.shape();
    if s.len() != 3 || window == 0 || stride == 0 || window > s[2] {
        return Err(Error::dim("pool", s, &[window, stride]));
    }
    let (b, c) = (s[0], s[1]);
    let cols = x.im2col(window, stride, 0)?;
    let lo = cols.shape()[1];
    let cols = cols.reshape(&[b, lo, c, window])?;
    let reduced = match kind {
        Pooling::Max => cols.max_axis(3)?,
        Pooling::Mean => cols.mean_axis(3)?,
        Pooling::L2 => cols.square()?.sum_axis(3)?.add_scalar(L2_POOL_EPS)?.sqrt()?,
        Pooling::None => unreachable!(),
    };
    reduced.permute(&[0, 2, 1])
}

#[cfg(test)]
mod tests;
