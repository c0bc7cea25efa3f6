//! Bilevel optimization through unrolled SGD. The inner loop runs on the
//! tape with `create_graph`, so the final objective can be differentiated
//! with respect to the learning rate or the activation network.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{mean_std, run_trials, trial_seed, Artifact, ExperimentResult, TrialRecord};
use crate::array::Array;
use crate::autodiff::{grad, Tape, Tensor};
use crate::datagen::{generate_dataset, Dataset, GeneratorConfig};
use crate::error::{Error, Result};
use crate::models::{forward_tensors, init_model, Activation, Model, ModelKind, ModelSpec};
use crate::rng::RngStream;
use crate::training::{adam_step, loss_and_grads, nll_loss, AdamState, LossKind};

const INIT_STREAM: u64 = 0x696e_6974;
const BATCH_STREAM: u64 = 0x6261_7463;
const EVAL_STREAM: u64 = 0x6576_616c;
/// Largest total hidden width the on-tape unroll accepts.
const MAX_META_HIDDEN: usize = 50;
/// Sample points of the activation curve: 401 points over `[-4, 4]`.
pub const ACTIVATION_GRID: usize = 401;

type Batch = (Array, Vec<usize>);

/// `ACTIVATION_GRID` evenly spaced points over `[-4, 4]`.
pub fn elu_grid() -> Vec<f64> {
    (0..ACTIVATION_GRID)
        .map(|i| -4.0 + 8.0 * i as f64 / (ACTIVATION_GRID - 1) as f64)
        .collect()
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Loss after `unroll` on-tape gradient steps on `f(w) = lambda w^2 / 2`
/// from `w0`, and its derivative with respect to the learning rate.
pub fn quadratic_probe(lambda: f64, w0: f64, unroll: usize, lr: f64) -> Result<(f64, f64)> {
    let tape = Tape::new();
    let lr_t = tape.leaf(&Tensor::scalar(lr));
    let (loss, _) = quadratic_unroll(&tape, lambda, w0, unroll, &lr_t)?;
    let g = grad(&loss, &[&lr_t], false)?;
    Ok((loss.item(), g[0].item()))
}

fn quadratic_unroll(tape: &Tape, lambda: f64, w0: f64, unroll: usize, lr: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut w = tape.leaf(&Tensor::scalar(w0));
    let f = |w: &Tensor| w.square()?.scale(0.5 * lambda);
    for _ in 0..unroll {
        let g = grad(&f(&w)?, &[&w], true)?;
        w = w.sub(&lr.mul(&g[0])?)?;
    }
    Ok((f(&w)?, w))
}

/// Adam on `log lr` for the quadratic probe; returns the lr trajectory.
pub fn quadratic_meta_lr(lambda: f64, w0: f64, unroll: usize, lr0: f64, outer_steps: usize, outer_lr: f64) -> Result<Vec<f64>> {
    meta_lr_loop(lr0, outer_steps, outer_lr, |_, lr| {
        let tape = lr.tape().expect("attached").clone();
        Ok(quadratic_unroll(&tape, lambda, w0, unroll, lr)?.0)
    })
    .map(|(lrs, _)| lrs)
}

/// Generic outer loop: `objective(step, lr)` builds a differentiable loss
/// from an attached scalar learning rate. Returns the learning rate before
/// every step plus the final one, and the objective values.
fn meta_lr_loop(
    lr0: f64,
    outer_steps: usize,
    outer_lr: f64,
    mut objective: impl FnMut(usize, &Tensor) -> Result<Tensor>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut log_lr = vec![Array::scalar(lr0.ln())];
    let mut adam = AdamState::new(&log_lr);
    let mut lrs = vec![lr0];
    let mut objs = Vec::with_capacity(outer_steps);
    for step in 0..outer_steps {
        let tape = Tape::new();
        let leaf = tape.leaf_array(&log_lr[0]);
        let lr = leaf.exp()?;
        let obj = objective(step, &lr)?;
        let g = grad(&obj, &[&leaf], false)?;
        let g = g[0].to_array();
        if !obj.item().is_finite() || !g.data()[0].is_finite() {
            return Err(Error::NonFinite { step });
        }
        adam_step(&mut log_lr, &[g], &mut adam, outer_lr, (0.9, 0.999), 1e-8);
        objs.push(obj.item());
        lrs.push(log_lr[0].data()[0].exp());
    }
    Ok((lrs, objs))
}

/// Draw `count` batches of `size` training rows, epoch-style.
fn sample_batches(data: &Dataset, size: usize, count: usize, rng: &mut RngStream) -> Vec<Batch> {
    let n = data.train_len();
    let size = size.min(n);
    let mut order = rng.permutation(n);
    let mut cursor = 0;
    (0..count)
        .map(|_| {
            if cursor + size > n {
                order = rng.permutation(n);
                cursor = 0;
            }
            let idx = &order[cursor..cursor + size];
            cursor += size;
            (data.x_train.select_rows(idx), idx.iter().map(|&i| data.y_train[i]).collect())
        })
        .collect()
}

fn eval_batch(data: &Dataset, size: usize, seed: u64) -> Batch {
    let mut b = sample_batches(data, size, 1, &mut RngStream::derive(seed, &[EVAL_STREAM]));
    b.pop().expect("one batch")
}

/// On-tape SGD from `init`: returns the final parameters and the batch
/// loss before each step. `phi` carries learned-activation parameters.
fn unroll_on_tape(
    tape: &Tape,
    init: &Model,
    phi: Option<&[Tensor]>,
    lr: &Tensor,
    batches: &[Batch],
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let mut params: Vec<Tensor> = init.params.iter().map(|p| tape.leaf_array(&p.value)).collect();
    let mut losses = Vec::with_capacity(batches.len());
    for (x, y) in batches {
        let logits = forward_tensors(&init.spec, &params, phi, &Tensor::from_array(x))?;
        let l = nll_loss(&logits, y)?;
        let refs: Vec<&Tensor> = params.iter().collect();
        let g = grad(&l, &refs, true)?;
        params = params
            .iter()
            .zip(&g)
            .map(|(p, g)| p.sub(&g.mul(lr)?))
            .collect::<Result<_>>()?;
        losses.push(l);
    }
    Ok((params, losses))
}

fn tape_eval(spec: &ModelSpec, params: &[Tensor], phi: Option<&[Tensor]>, eval: &Batch) -> Result<Tensor> {
    nll_loss(&forward_tensors(spec, params, phi, &Tensor::from_array(&eval.0))?, &eval.1)
}

/// Plain SGD run (no second-order tape): batch loss before each step and,
/// last, the loss on `eval` after all steps. Divergence shows up as
/// non-finite values rather than an error.
pub fn unrolled_losses(model: &Model, lr: f64, batches: &[Batch], eval: &Batch) -> Result<Vec<f64>> {
    let mut m = model.clone();
    let mut out = Vec::with_capacity(batches.len() + 1);
    for (x, y) in batches {
        let (l, g) = loss_and_grads(&m, x, y, LossKind::Nll)?;
        out.push(l);
        if !l.is_finite() {
            out.resize(batches.len() + 1, f64::INFINITY);
            return Ok(out);
        }
        for (p, g) in m.params.iter_mut().zip(&g) {
            for (w, d) in p.value.data_mut().iter_mut().zip(g.data()) {
                *w -= lr * d;
            }
        }
    }
    let logits = m.forward(&Tensor::from_array(&eval.0))?;
    let l = nll_loss(&logits, &eval.1)?.item();
    out.push(if l.is_finite() { l } else { f64::INFINITY });
    Ok(out)
}

fn check_meta_spec(spec: &ModelSpec) -> Result<()> {
    if spec.kind != ModelKind::Mlp {
        return Err(Error::Config("metalearning unrolls an MLP".into()));
    }
    let h: usize = spec.hidden_sizes.iter().sum();
    if h > MAX_META_HIDDEN {
        return Err(Error::Config(format!(
            "metalearning model has {h} hidden units; at most {MAX_META_HIDDEN} fit the unrolled tape"
        )));
    }
    Ok(())
}

/// Fresh initialization and batch stream for outer step or eval seed `key`.
fn episode(spec: &ModelSpec, data: &Dataset, seed: u64, key: u64, batch: usize, unroll: usize) -> Result<(Model, Vec<Batch>)> {
    let init_seed = RngStream::derive(seed, &[INIT_STREAM, key]).next_u64();
    let model = init_model(&spec.clone().with_seed(init_seed))?;
    let batches = sample_batches(data, batch, unroll, &mut RngStream::derive(seed, &[BATCH_STREAM, key]));
    Ok((model, batches))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaLrConfig {
    pub data: GeneratorConfig,
    pub spec: ModelSpec,
    pub batch_size: usize,
    pub unroll: usize,
    pub outer_steps: usize,
    pub outer_lr: f64,
    pub initial_lr: f64,
    /// Training rows the inner objective is measured on.
    pub eval_size: usize,
    /// Held-out episodes for the bracket comparison.
    pub n_seeds: usize,
    pub seed: u64,
}

impl Default for MetaLrConfig {
    fn default() -> Self {
        MetaLrConfig {
            data: GeneratorConfig::default(),
            spec: ModelSpec::mlp(&[32]),
            batch_size: 100,
            unroll: 100,
            outer_steps: 500,
            outer_lr: 1e-2,
            initial_lr: 0.1,
            eval_size: 1000,
            n_seeds: 3,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaLrReport {
    pub result: ExperimentResult,
    /// Learning rate before each outer step, then the final value.
    pub lr_trajectory: Vec<f64>,
    pub objective: Vec<f64>,
    pub final_lr: f64,
    /// Mean inner objective at `lr* / 10`, `lr*`, `10 lr*`.
    pub bracket: [f64; 3],
}

impl MetaLrReport {
    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        let mut s = String::from("outer_step,lr,objective\n");
        for (i, lr) in self.lr_trajectory.iter().enumerate() {
            let o = self.objective.get(i).map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{i},{lr},{o}");
        }
        let mut b = String::from("lr,mean_loss\n");
        for (f, v) in [0.1, 1.0, 10.0].iter().zip(&self.bracket) {
            let _ = writeln!(b, "{},{}", f * self.final_lr, v);
        }
        Ok(vec![
            Artifact::json("result.json", &self.result)?,
            Artifact::text("lr_trajectory.csv", s),
            Artifact::text("bracket.csv", b),
        ])
    }
}

/// Learn the inner SGD learning rate: each outer step draws a fresh
/// initialization and batch stream, unrolls `unroll` steps on the tape and
/// descends the final loss on a fixed slice of training data with Adam on
/// `log lr`. The result is then compared with `lr* / 10` and `10 lr*` on
/// held-out episodes.
pub fn metalearn_lr(cfg: &MetaLrConfig) -> Result<MetaLrReport> {
    check_meta_spec(&cfg.spec)?;
    if cfg.initial_lr.is_nan() || cfg.initial_lr <= 0.0 || cfg.unroll == 0 || cfg.n_seeds == 0 {
        return Err(Error::Config("metalearn-lr needs initial_lr > 0, unroll >= 1, n_seeds >= 1".into()));
    }
    let started = Instant::now();
    let data = generate_dataset(&cfg.data)?;
    let eval = eval_batch(&data, cfg.eval_size, cfg.seed);
    let (lrs, objective) = meta_lr_loop(cfg.initial_lr, cfg.outer_steps, cfg.outer_lr, |step, lr| {
        let (model, batches) = episode(&cfg.spec, &data, cfg.seed, step as u64, cfg.batch_size, cfg.unroll)?;
        let tape = lr.tape().expect("attached").clone();
        let (params, _) = unroll_on_tape(&tape, &model, None, lr, &batches)?;
        let obj = tape_eval(&cfg.spec, &params, None, &eval)?;
        if step % 10 == 0 {
            log::info!("metalearn-lr step {step}: lr {:.4}, objective {:.4}", lr.item(), obj.item());
        }
        Ok(obj)
    })?;
    let final_lr = *lrs.last().expect("initial lr");
    let factors = [0.1, 1.0, 10.0];
    let trials = run_trials(cfg.n_seeds * factors.len(), |i| {
        let s = i / factors.len();
        // held-out keys never collide with outer-step keys
        let key = u64::MAX - s as u64;
        let (model, batches) = episode(&cfg.spec, &data, cfg.seed, key, cfg.batch_size, cfg.unroll)?;
        let lr = factors[i % factors.len()] * final_lr;
        let losses = unrolled_losses(&model, lr, &batches, &eval)?;
        Ok(TrialRecord::new(format!("lr_x{}", factors[i % factors.len()]), trial_seed(cfg.seed, s))
            .metric("lr", lr)
            .metric("final_loss", *losses.last().expect("eval loss")))
    })?;
    let mut bracket = [0.0; 3];
    for (k, f) in factors.iter().enumerate() {
        let v: Vec<f64> = trials
            .iter()
            .filter(|t| t.group == format!("lr_x{f}"))
            .map(|t| t.metrics["final_loss"])
            .collect();
        bracket[k] = mean_std(&v).0;
    }
    Ok(MetaLrReport {
        result: ExperimentResult::new("metalearn_lr", cfg, trials, started)?,
        lr_trajectory: lrs,
        objective,
        final_lr,
        bracket,
    })
}

/// Regress the scalar network `phi` onto ELU over [`elu_grid`] with Adam
/// until its maximum error drops below `tol`.
pub fn pretrain_phi(spec: &ModelSpec, steps: usize, lr: f64, tol: f64) -> Result<(Model, f64)> {
    if spec.kind != ModelKind::ScalarNet {
        return Err(Error::Config("phi must be a scalar network".into()));
    }
    let xs = elu_grid();
    let x = Tensor::new(&[xs.len(), 1], xs.clone())?;
    let target = Tensor::new(&[xs.len(), 1], xs.iter().map(|&v| elu(v)).collect())?;
    let mut phi = init_model(spec)?;
    let max_err = |m: &Model| -> Result<f64> {
        let y = m.forward(&x)?;
        Ok(y.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    };
    let mut values: Vec<Array> = phi.params.iter().map(|p| p.value.clone()).collect();
    let mut adam = AdamState::new(&values);
    let mut err = max_err(&phi)?;
    for step in 0..steps {
        if err < tol {
            break;
        }
        let tape = Tape::new();
        let params: Vec<Tensor> = values.iter().map(|v| tape.leaf_array(v)).collect();
        let l = forward_tensors(spec, &params, None, &x)?.sub(&target)?.square()?.mean()?;
        let refs: Vec<&Tensor> = params.iter().collect();
        let g: Vec<Array> = grad(&l, &refs, false)?.iter().map(Tensor::to_array).collect();
        adam_step(&mut values, &g, &mut adam, lr, (0.9, 0.999), 1e-8);
        if step % 100 == 99 || step + 1 == steps {
            for (p, v) in phi.params.iter_mut().zip(&values) {
                p.value = v.clone();
            }
            err = max_err(&phi)?;
        }
    }
    if err >= tol {
        return Err(Error::Config(format!(
            "phi pretraining stopped at max error {err:.4} (tolerance {tol})"
        )));
    }
    Ok((phi, err))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaActConfig {
    pub data: GeneratorConfig,
    /// Classifier; its activation is replaced by the learned network.
    pub spec: ModelSpec,
    pub phi_hidden: usize,
    pub inner_lr: f64,
    pub batch_size: usize,
    pub unroll: usize,
    pub outer_steps: usize,
    pub outer_lr: f64,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub pretrain_tol: f64,
    pub eval_size: usize,
    pub n_seeds: usize,
    pub seed: u64,
}

impl Default for MetaActConfig {
    fn default() -> Self {
        MetaActConfig {
            data: GeneratorConfig::default(),
            spec: ModelSpec::mlp(&[32]),
            phi_hidden: 16,
            inner_lr: 0.1,
            batch_size: 100,
            unroll: 50,
            outer_steps: 100,
            outer_lr: 1e-2,
            pretrain_steps: 20_000,
            pretrain_lr: 1e-2,
            pretrain_tol: 0.02,
            eval_size: 1000,
            n_seeds: 3,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaActReport {
    pub result: ExperimentResult,
    pub phi: Model,
    pub pretrain_error: f64,
    /// Outer objective per step.
    pub objective: Vec<f64>,
    /// Largest relative gap between the pretrained-phi and ELU inner loss
    /// curves, before outer training.
    pub elu_fidelity: f64,
    /// `(x, phi(x))` over [`elu_grid`].
    pub curve: Vec<(f64, f64)>,
}

pub const BASELINES: [&str; 5] = ["relu", "elu", "tanh", "swish", "learned"];

impl MetaActReport {
    /// Mean eval loss at the unroll horizon for one activation.
    pub fn final_loss(&self, activation: &str) -> f64 {
        self.result.mean(activation, "final_loss")
    }

    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        let mut c = String::from("x,phi,elu\n");
        for &(x, y) in &self.curve {
            let _ = writeln!(c, "{x},{y},{}", elu(x));
        }
        let mut o = String::from("outer_step,objective\n");
        for (i, v) in self.objective.iter().enumerate() {
            let _ = writeln!(o, "{i},{v}");
        }
        let mut l = String::from("activation,seed,step,loss\n");
        for t in &self.result.trials {
            for c in &t.curves {
                let _ = writeln!(l, "{},{},{},{}", t.group, t.seed, c.step, c.train_loss);
            }
        }
        Ok(vec![
            Artifact::json("result.json", &self.result)?,
            Artifact::text("activation.csv", c),
            Artifact::text("objective.csv", o),
            Artifact::text("loss_curves.csv", l),
        ])
    }
}

fn with_phi(model: &Model, phi: &Model) -> Model {
    Model {
        phi: Some(Box::new(phi.clone())),
        ..model.clone()
    }
}

/// Learn the classifier's activation: pretrain `phi` to ELU, then descend
/// the mean inner batch loss over the first `unroll` SGD steps with respect
/// to phi's parameters. Every baseline and the learned activation are then
/// trained from identical initializations and batches on held-out
/// episodes.
pub fn metalearn_activation(cfg: &MetaActConfig) -> Result<MetaActReport> {
    check_meta_spec(&cfg.spec)?;
    if cfg.unroll == 0 || cfg.n_seeds == 0 {
        return Err(Error::Config("metalearn-act needs unroll >= 1 and n_seeds >= 1".into()));
    }
    let started = Instant::now();
    let data = generate_dataset(&cfg.data)?;
    let eval = eval_batch(&data, cfg.eval_size, cfg.seed);
    let phi_spec = ModelSpec::scalar_net(cfg.phi_hidden).with_seed(cfg.seed);
    let (mut phi, pretrain_error) = pretrain_phi(&phi_spec, cfg.pretrain_steps, cfg.pretrain_lr, cfg.pretrain_tol)?;
    let spec_for = |a: Activation| cfg.spec.clone().with_activation(a);
    let learned_spec = spec_for(Activation::Learned(Box::new(phi_spec.clone())));

    let held_out = |s: usize, spec: &ModelSpec| episode(spec, &data, cfg.seed, u64::MAX - s as u64, cfg.batch_size, cfg.unroll);
    let elu_fidelity = {
        let (m, b) = held_out(0, &spec_for(Activation::Elu))?;
        let base = unrolled_losses(&m, cfg.inner_lr, &b, &eval)?;
        let (m, b) = held_out(0, &learned_spec)?;
        let ours = unrolled_losses(&with_phi(&m, &phi), cfg.inner_lr, &b, &eval)?;
        base.iter().zip(&ours).map(|(a, b)| ((a - b) / a).abs()).fold(0.0, f64::max)
    };

    let mut values: Vec<Array> = phi.params.iter().map(|p| p.value.clone()).collect();
    let mut adam = AdamState::new(&values);
    let mut objective = Vec::with_capacity(cfg.outer_steps);
    for step in 0..cfg.outer_steps {
        let (model, batches) = episode(&learned_spec, &data, cfg.seed, step as u64, cfg.batch_size, cfg.unroll)?;
        let tape = Tape::new();
        let phi_t: Vec<Tensor> = values.iter().map(|v| tape.leaf_array(v)).collect();
        let lr = Tensor::scalar(cfg.inner_lr);
        let (_, losses) = unroll_on_tape(&tape, &model, Some(&phi_t), &lr, &batches)?;
        let mut total = losses[0].clone();
        for l in &losses[1..] {
            total = total.add(l)?;
        }
        let obj = total.scale(1.0 / losses.len() as f64)?;
        let refs: Vec<&Tensor> = phi_t.iter().collect();
        let g: Vec<Array> = grad(&obj, &refs, false)?.iter().map(Tensor::to_array).collect();
        if !obj.item().is_finite() || g.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { step });
        }
        adam_step(&mut values, &g, &mut adam, cfg.outer_lr, (0.9, 0.999), 1e-8);
        objective.push(obj.item());
        if step % 10 == 0 {
            log::info!("metalearn-act step {step}: objective {:.4}", obj.item());
        }
    }
    for (p, v) in phi.params.iter_mut().zip(values) {
        p.value = v;
    }

    let acts = [Activation::Relu, Activation::Elu, Activation::Tanh, Activation::Swish];
    let trials = run_trials(cfg.n_seeds * BASELINES.len(), |i| {
        let (s, a) = (i / BASELINES.len(), i % BASELINES.len());
        let (model, batches) = if a < acts.len() {
            held_out(s, &spec_for(acts[a].clone()))?
        } else {
            let (m, b) = held_out(s, &learned_spec)?;
            (with_phi(&m, &phi), b)
        };
        let losses = unrolled_losses(&model, cfg.inner_lr, &batches, &eval)?;
        let mut rec = TrialRecord::new(BASELINES[a], trial_seed(cfg.seed, s))
            .metric("final_loss", *losses.last().expect("eval loss"))
            .metric("mean_batch_loss", losses[..cfg.unroll].iter().sum::<f64>() / cfg.unroll as f64);
        rec.curves = losses[..cfg.unroll]
            .iter()
            .enumerate()
            .map(|(step, &l)| crate::training::CurvePoint {
                step,
                train_loss: l,
                train_acc: f64::NAN,
                val_acc: None,
                test_acc: f64::NAN,
            })
            .collect();
        Ok(rec)
    })?;

    let xs = elu_grid();
    let y = phi.forward(&Tensor::new(&[xs.len(), 1], xs.clone())?)?;
    let curve = xs.into_iter().zip(y.data().iter().copied()).collect();
    Ok(MetaActReport {
        result: ExperimentResult::new("metalearn_act", cfg, trials, started)?,
        phi,
        pretrain_error,
        objective,
        elu_fidelity,
        curve,
    })
}
