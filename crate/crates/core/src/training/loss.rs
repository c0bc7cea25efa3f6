use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Nll,
    Mse,
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<usize> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
        return Err(Error::dim("loss", s, &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s[1]) {
        return Err(Error::Data(format!("label {bad} out of range for {} classes", s[1])));
    }
    Ok(s[1])
}

pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut d = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        d[i * classes + l] = 1.0;
    }
    Tensor::new(&[labels.len(), classes], d).expect("consistent one-hot shape")
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn nll_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let k = check_labels(logits, labels)?;
    let picked = logits.log_softmax()?.mul(&one_hot(labels, k))?;
    picked.sum()?.scale(-1.0 / labels.len() as f64)
}

/// Mean over batch and classes of `(logits - one_hot(label))^2`.
pub fn mse_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let k = check_labels(logits, labels)?;
    logits.sub(&one_hot(labels, k))?.square()?.mean()
}

pub fn loss(kind: LossKind, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    match kind {
        LossKind::Nll => nll_loss(logits, labels),
        LossKind::Mse => mse_loss(logits, labels),
    }
}
