use serde::{Deserialize, Serialize};

use crate::corpus::{ContextPair, TokenId, TokenSequence};
use crate::decoder::{argmax, logits_to_distribution};
use crate::error::{Error, Result};
use crate::model::{forward, nll_sum, shifted, Parameters, Scalar};

/// Sum of next-token NLL over a sequence and the number of scored tokens.
pub fn sequence_nll<T: Scalar>(params: &Parameters<T>, seq: &[TokenId]) -> Result<(f64, usize)> {
    if seq.len() < 2 {
        return Err(Error::Invalid("perplexity needs sequences of at least 2 tokens".into()));
    }
    let (x, y) = shifted(seq)?;
    Ok((nll_sum(&forward(params, x)?, y)?, y.len()))
}

/// `exp` of the mean per-token NLL over every position of every sequence.
pub fn perplexity<T: Scalar, S: AsRef<[TokenId]>>(params: &Parameters<T>, seqs: &[S]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::Empty("perplexity sequences"));
    }
    let (mut nll, mut n) = (0.0, 0usize);
    for s in seqs {
        let (a, b) = sequence_nll(params, s.as_ref())?;
        nll += a;
        n += b;
    }
    Ok((nll / n as f64).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionStats {
    pub entropy: f64,
    pub at1: f64,
    pub at3: f64,
    pub at5: f64,
    pub positions: usize,
}

/// Mean entropy and top-1/3/5 mass of the predicted distributions at every
/// position of `seqs` that has a next token.
pub fn sequence_prediction_stats<T: Scalar, S: AsRef<[TokenId]>>(
    params: &Parameters<T>,
    seqs: &[S],
) -> Result<PredictionStats> {
    let mut acc = [0.0f64; 4];
    let mut n = 0usize;
    for s in seqs {
        let (x, _) = shifted(s.as_ref())?;
        let logits = forward(params, x)?;
        for i in 0..logits.rows {
            let d = logits_to_distribution(logits.row(i), 1.0)?;
            acc[0] += d.entropy();
            acc[1] += d.top_mass(1);
            acc[2] += d.top_mass(3);
            acc[3] += d.top_mass(5);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("prediction positions"));
    }
    let m = n as f64;
    Ok(PredictionStats { entropy: acc[0] / m, at1: acc[1] / m, at3: acc[2] / m, at5: acc[3] / m, positions: n })
}

/// Statistics over the original texts, context and continuation joined.
pub fn prediction_stats<T: Scalar>(params: &Parameters<T>, pairs: &[ContextPair]) -> Result<PredictionStats> {
    let joined: Vec<Vec<TokenId>> = pairs.iter().map(ContextPair::joined).collect();
    sequence_prediction_stats(params, &joined)
}

/// Fraction of positions where both models rank the same token first.
pub fn top1_agreement<T: Scalar, S: AsRef<[TokenId]>>(a: &Parameters<T>, b: &Parameters<T>, seqs: &[S]) -> Result<f64> {
    if a.config.vocab_size != b.config.vocab_size {
        return Err(Error::VocabMismatch(a.config.vocab_size, b.config.vocab_size));
    }
    let (mut same, mut total) = (0usize, 0usize);
    for s in seqs {
        let (x, _) = shifted(s.as_ref())?;
        let (la, lb) = (forward(a, x)?, forward(b, x)?);
        for i in 0..la.rows {
            same += (argmax(la.row(i)) == argmax(lb.row(i))) as usize;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("agreement positions"));
    }
    Ok(same as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl AgreementMatrix {
    pub fn build<T: Scalar>(models: &[(&str, &Parameters<T>)], seqs: &[TokenSequence]) -> Result<Self> {
        let k = models.len();
        let mut values = vec![vec![0.0; k]; k];
        for i in 0..k {
            values[i][i] = 1.0;
            for j in i + 1..k {
                let v = top1_agreement(models[i].1, models[j].1, seqs)?;
                values[i][j] = v;
                values[j][i] = v;
            }
        }
        Ok(Self { labels: models.iter().map(|(l, _)| l.to_string()).collect(), values })
    }

    pub fn is_symmetric(&self) -> bool {
        let k = self.values.len();
        (0..k).all(|i| (0..k).all(|j| self.values[i][j] == self.values[j][i]))
    }

    pub fn has_unit_diagonal(&self) -> bool {
        self.values.iter().enumerate().all(|(i, r)| r[i] == 1.0)
    }

    pub fn off_diagonal(&self) -> Vec<f64> {
        let k = self.values.len();
        (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).map(|(i, j)| self.values[i][j]).collect()
    }
}
