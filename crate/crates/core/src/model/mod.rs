//! Compact decoder-only transformer with exact forward, loss and gradients.

mod checkpoint;
mod config;
mod decode;
mod params;
mod scalar;
mod transformer;

use crate::corpus::TokenId;
use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use config::ModelConfig;
pub use decode::DecodeState;
pub use params::{layout, Gradients, Parameters, Tensor, TensorClass};
pub use scalar::{DType, Scalar};

/// Pre-softmax scores, one row of `vocab` entries per input position.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitsMatrix<T> {
    pub rows: usize,
    pub vocab: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> LogitsMatrix<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.vocab..(i + 1) * self.vocab]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub fn forward<T: Scalar>(params: &Parameters<T>, input: &[TokenId]) -> Result<LogitsMatrix<T>> {
    transformer::forward_cached(params, input).map(|(l, _)| l)
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln()
}

fn check_targets(rows: usize, vocab: usize, targets: &[TokenId]) -> Result<()> {
    if targets.len() != rows {
        return Err(Error::LengthMismatch { expected: rows, actual: targets.len() });
    }
    if rows == 0 {
        return Err(Error::Empty("targets"));
    }
    match targets.iter().find(|&&t| t as usize >= vocab) {
        Some(&id) => Err(Error::TokenOutOfRange { id, vocab_size: vocab }),
        None => Ok(()),
    }
}

/// Summed negative log-likelihood of `targets` under each row.
pub fn nll_sum<T: Scalar>(logits: &LogitsMatrix<T>, targets: &[TokenId]) -> Result<f64> {
    check_targets(logits.rows, logits.vocab, targets)?;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let row = logits.row(i);
            (log_sum_exp(row) - row[t as usize]).as_f64()
        })
        .sum())
}

/// Mean next-token negative log-likelihood in nats per token.
pub fn nll_loss<T: Scalar>(logits: &LogitsMatrix<T>, targets: &[TokenId]) -> Result<f64> {
    Ok(nll_sum(logits, targets)? / targets.len() as f64)
}

/// A training example: `input[t]` predicts `targets[t]`.
pub type Example<'a> = (&'a [TokenId], &'a [TokenId]);

/// Splits a sequence into its next-token (input, target) pair.
pub fn shifted(seq: &[TokenId]) -> Result<Example<'_>> {
    if seq.len() < 2 {
        return Err(Error::Invalid("next-token example needs at least 2 tokens".into()));
    }
    Ok((&seq[..seq.len() - 1], &seq[1..]))
}

/// Mean loss over every target token of the batch, and its exact gradient.
pub fn loss_and_grad<T: Scalar>(params: &Parameters<T>, batch: &[Example<'_>]) -> Result<(f64, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let total: usize = batch.iter().map(|(_, t)| t.len()).sum();
    let scale = T::of(1.0 / total as f64);
    let mut grads = Gradients::zeros_like(params);
    let mut nll = 0.0;
    for &(input, targets) in batch {
        let (logits, cache) = transformer::forward_cached(params, input)?;
        check_targets(logits.rows, logits.vocab, targets)?;
        let v = logits.vocab;
        let mut dlogits = vec![T::zero(); logits.data.len()];
        for (i, &t) in targets.iter().enumerate() {
            let row = logits.row(i);
            let lse = log_sum_exp(row);
            nll += (lse - row[t as usize]).as_f64();
            let dr = &mut dlogits[i * v..(i + 1) * v];
            for (g, &x) in dr.iter_mut().zip(row) {
                *g = (x - lse).exp() * scale;
            }
            dr[t as usize] = dr[t as usize] - scale;
        }
        transformer::backward_cached(params, input, &cache, &dlogits, &mut grads);
    }
    Ok((nll / total as f64, grads))
}

/// Exact gradient of `nll_loss(forward(params, input), targets)`.
pub fn backward<T: Scalar>(params: &Parameters<T>, input: &[TokenId], targets: &[TokenId]) -> Result<(f64, Gradients<T>)> {
    loss_and_grad(params, &[(input, targets)])
}
