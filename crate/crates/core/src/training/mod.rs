//! Losses, optimizers and the deterministic training loop with
//! validation-based early stopping.

mod loss;
mod optim;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::autodiff::{grad, Tape, Tensor};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::rng::RngStream;

pub use loss::{loss, mse_loss, nll_loss, one_hot, LossKind};
pub use optim::{adam_step, mask_grads, sgd_step, AdamState, OptimizerKind};

/// Rows per forward pass during evaluation.
const EVAL_CHUNK: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    /// Evaluations without validation improvement before stopping; 0
    /// disables early stopping.
    pub early_stop_patience: usize,
    pub loss: LossKind,
    pub label_noise_frac: f64,
    pub seed: u64,
    /// Size of the validation split taken from the end of the training set.
    pub val_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-2,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.0,
            batch_size: 100,
            max_steps: 12_000,
            eval_every: 200,
            early_stop_patience: 10,
            loss: LossKind::Nll,
            label_noise_frac: 0.0,
            seed: 0,
            val_count: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train config: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("betas must lie in [0, 1)");
        }
        if self.eps < 0.0 || self.weight_decay < 0.0 {
            return bad("eps and weight_decay must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.label_noise_frac) {
            return bad("label_noise_frac must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Absent when training without a validation split.
    pub val_acc: Option<f64>,
    pub test_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub best_model: Model,
    pub best_step: usize,
    pub curves: Vec<CurvePoint>,
    pub stopped_at: usize,
}

impl TrainResult {
    pub fn best_point(&self) -> &CurvePoint {
        self.curves.iter().find(|c| c.step == self.best_step).expect("best step is recorded")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(model: &Model, x: &Array, y: &[usize]) -> Result<Evaluation> {
    evaluate_with(model, x, y, LossKind::Nll)
}

pub fn evaluate_with(model: &Model, x: &Array, y: &[usize], kind: LossKind) -> Result<Evaluation> {
    if x.rows() != y.len() {
        return Err(Error::dim("evaluate", x.shape(), &[y.len()]));
    }
    if y.is_empty() {
        return Err(Error::Data("evaluate on an empty set".into()));
    }
    let (mut loss_sum, mut correct) = (0.0, 0usize);
    let idx: Vec<usize> = (0..y.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let labels: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
        let logits = model.forward(&Tensor::from_array(&x.select_rows(chunk)))?;
        loss_sum += loss(kind, &logits, &labels)?.item() * chunk.len() as f64;
        let k = logits.shape()[1];
        correct += logits.data().chunks(k).zip(&labels).filter(|(row, &l)| argmax(row) == l).count();
    }
    Ok(Evaluation {
        loss: loss_sum / y.len() as f64,
        accuracy: correct as f64 / y.len() as f64,
    })
}

/// Replace exactly `round(frac * n)` uniformly chosen labels with a
/// uniformly drawn *different* class.
pub fn corrupt_labels(y: &[usize], frac: f64, classes: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut out = y.to_vec();
    let n = (frac * y.len() as f64).round() as usize;
    if n == 0 || classes < 2 {
        return out;
    }
    let order = rng.permutation(y.len());
    for &i in &order[..n.min(y.len())] {
        out[i] = (y[i] + 1 + rng.below(classes - 1)) % classes;
    }
    out
}

/// Indices of a validation split of `count` examples taken from the end
/// of the training set, balanced across classes (earlier classes absorb
/// the remainder). Returns `(fit, val)`, both in ascending order.
pub fn split_validation(y: &[usize], classes: usize, count: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if count >= y.len() && count > 0 {
        return Err(Error::Data(format!("validation split of {count} leaves no training data out of {}", y.len())));
    }
    let mut quota: Vec<usize> = (0..classes).map(|c| count / classes + usize::from(c < count % classes)).collect();
    let mut is_val = vec![false; y.len()];
    let mut taken = 0;
    for i in (0..y.len()).rev() {
        if taken == count {
            break;
        }
        if quota[y[i]] > 0 {
            quota[y[i]] -= 1;
            is_val[i] = true;
            taken += 1;
        }
    }
    if taken < count {
        return Err(Error::Data(format!("cannot draw a balanced validation split of {count}")));
    }
    let (val, fit): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| is_val[i]);
    Ok((fit, val))
}

/// Deterministic mini-batch order: a fresh shuffle per epoch, dropping
/// the tail that does not fill a batch. Full batches when `batch >= n`.
struct Batches {
    n: usize,
    batch: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: RngStream,
}

impl Batches {
    fn new(n: usize, batch: usize, rng: RngStream) -> Self {
        Batches {
            n,
            batch: batch.min(n),
            order: (0..n).collect(),
            cursor: n,
            rng,
        }
    }

    fn next(&mut self) -> &[usize] {
        if self.batch == self.n {
            return &self.order;
        }
        if self.cursor + self.batch > self.n {
            self.order = self.rng.permutation(self.n);
            self.cursor = 0;
        }
        self.cursor += self.batch;
        &self.order[self.cursor - self.batch..self.cursor]
    }
}

/// Loss and parameter gradients of `model` on one batch.
pub fn loss_and_grads(model: &Model, x: &Array, y: &[usize], kind: LossKind) -> Result<(f64, Vec<Array>)> {
    let tape = Tape::new();
    let params: Vec<Tensor> = model.params.iter().map(|p| tape.leaf_array(&p.value)).collect();
    let phi = model.phi.as_ref().map(|m| m.param_tensors());
    let logits = crate::models::forward_tensors(&model.spec, &params, phi.as_deref(), &Tensor::from_array(x))?;
    let l = loss(kind, &logits, y)?;
    let refs: Vec<&Tensor> = params.iter().collect();
    let grads = grad(&l, &refs, false)?;
    Ok((l.item(), grads.iter().map(Tensor::to_array).collect()))
}

/// Train with early stopping on a validation split carved from the end of
/// the training set. Test accuracy is recorded at every evaluation but
/// never used for selection.
pub fn train(model: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if data.train_len() == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    if data.seq_len() != model.spec.input_len {
        return Err(Error::dim("train", &[data.seq_len()], &[model.spec.input_len]));
    }
    let classes = model.spec.num_classes;
    let (fit_idx, val_idx) = split_validation(&data.y_train, classes, cfg.val_count)?;
    let x_fit = data.x_train.select_rows(&fit_idx);
    let clean: Vec<usize> = fit_idx.iter().map(|&i| data.y_train[i]).collect();
    let y_fit = if cfg.label_noise_frac > 0.0 {
        corrupt_labels(&clean, cfg.label_noise_frac, classes, &mut RngStream::derive(cfg.seed, &[0x4c4e]))
    } else {
        clean
    };
    let x_val = data.x_train.select_rows(&val_idx);
    let y_val: Vec<usize> = val_idx.iter().map(|&i| data.y_train[i]).collect();

    let mut model = model.clone();
    model.apply_mask();
    let mut batches = Batches::new(fit_idx.len(), cfg.batch_size, RngStream::derive(cfg.seed, &[0xba7c]));
    let mut adam = AdamState::new(&model.params.iter().map(|p| p.value.clone()).collect::<Vec<_>>());

    let mut curves = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stale = 0;
    let mut step = 0;
    loop {
        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let tr = evaluate_with(&model, &x_fit, &y_fit, cfg.loss)?;
            if !tr.loss.is_finite() {
                return Err(Error::NonFinite { step });
            }
            let val = if y_val.is_empty() {
                None
            } else {
                Some(evaluate(&model, &x_val, &y_val)?.accuracy)
            };
            let test_acc = if data.test_len() > 0 {
                evaluate(&model, &data.x_test, &data.y_test)?.accuracy
            } else {
                f64::NAN
            };
            curves.push(CurvePoint {
                step,
                train_loss: tr.loss,
                train_acc: tr.accuracy,
                val_acc: val,
                test_acc,
            });
            // without validation data the latest model is the selected one
            let score = val.unwrap_or(f64::INFINITY);
            match &best {
                Some((s, _, _)) if score <= *s && val.is_some() => stale += 1,
                _ => {
                    best = Some((score, step, model.clone()));
                    stale = 0;
                }
            }
            if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                break;
            }
        }
        if step == cfg.max_steps {
            break;
        }
        let idx = batches.next().to_vec();
        let xb = x_fit.select_rows(&idx);
        let yb: Vec<usize> = idx.iter().map(|&i| y_fit[i]).collect();
        let (l, mut grads) = loss_and_grads(&model, &xb, &yb, cfg.loss)?;
        if !l.is_finite() {
            return Err(Error::NonFinite { step });
        }
        if cfg.weight_decay > 0.0 {
            for (g, p) in grads.iter_mut().zip(&model.params) {
                for (g, w) in g.data_mut().iter_mut().zip(p.value.data()) {
                    *g += cfg.weight_decay * w;
                }
            }
        }
        if let Some(m) = &model.masks {
            mask_grads(&mut grads, m);
        }
        let mut values: Vec<Array> = model.params.iter().map(|p| p.value.clone()).collect();
        match cfg.optimizer {
            OptimizerKind::Adam => adam_step(&mut values, &grads, &mut adam, cfg.learning_rate, cfg.betas, cfg.eps),
            OptimizerKind::Sgd => sgd_step(&mut values, &grads, cfg.learning_rate),
        }
        for (p, v) in model.params.iter_mut().zip(values) {
            p.value = v;
        }
        model.apply_mask();
        step += 1;
    }
    let (_, best_step, best_model) = best.expect("at least one evaluation");
    Ok(TrainResult {
        best_model,
        best_step,
        curves,
        stopped_at: step,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_curves_csv(mut w: impl Write, curves: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(w, "step,train_loss,train_acc,val_acc,test_acc")?;
    for c in curves {
        writeln!(w, "{},{},{},{},{}", c.step, c.train_loss, c.train_acc, fmt_opt(c.val_acc), c.test_acc)?;
    }
    Ok(())
}
