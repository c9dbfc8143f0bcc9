//! Generation and prediction metrics: TTR, Self-BLEU, Dataset BLEU,
//! dataset overlap, perplexity, prediction sharpness and top-1 agreement.

mod bleu;
mod model_stats;
mod overlap;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{HyperfitSet, TokenId};
use crate::decoder::GenerationTrace;
use crate::error::{Error, Result};

pub use bleu::{bleu, bleu_profiles, dataset_bleu, self_bleu, self_bleu_per_sequence, NGramProfile, MAX_ORDER, SMOOTHING_EPS};
pub use model_stats::{
    perplexity, prediction_stats, sequence_nll, sequence_prediction_stats, top1_agreement, AgreementMatrix,
    PredictionStats,
};
pub use overlap::{MatchLocation, Overlap, OverlapIndex};

pub const TTR_WINDOW: usize = 96;
pub const DATASET_BLEU_WINDOW: usize = 96;
pub const OVERLAP_THRESHOLD: usize = 5;

fn tail(seq: &[TokenId], window: usize) -> &[TokenId] {
    &seq[seq.len().saturating_sub(window)..]
}

/// Unique tokens over total tokens in the last `window` tokens.
pub fn ttr(seq: &[TokenId], window: usize) -> Result<f64> {
    if seq.is_empty() {
        return Err(Error::Empty("ttr sequence"));
    }
    if window == 0 {
        return Err(Error::Invalid("ttr window must be at least 1".into()));
    }
    let t = tail(seq, window);
    let unique: HashSet<&TokenId> = t.iter().collect();
    Ok(unique.len() as f64 / t.len() as f64)
}

pub fn mean_ttr<S: AsRef<[TokenId]>>(seqs: &[S], window: usize) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::Empty("ttr sequences"));
    }
    let mut sum = 0.0;
    for s in seqs {
        sum += ttr(s.as_ref(), window)?;
    }
    Ok(sum / seqs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    /// Number of generated tokens so far.
    pub position: usize,
    pub mean_ttr: f64,
}

/// Mean TTR of the most recent `window` tokens at every generation length
/// from `window` up to the shortest trace.
pub fn ttr_vs_position(traces: &[GenerationTrace], window: usize) -> Result<Vec<DecayPoint>> {
    let seqs: Vec<Vec<TokenId>> = traces.iter().map(GenerationTrace::tokens).collect();
    ttr_curve(&seqs, window)
}

pub fn ttr_curve<S: AsRef<[TokenId]>>(seqs: &[S], window: usize) -> Result<Vec<DecayPoint>> {
    if seqs.is_empty() {
        return Err(Error::Empty("traces"));
    }
    let shortest = seqs.iter().map(|s| s.as_ref().len()).min().unwrap_or(0);
    if window == 0 || shortest < window {
        return Err(Error::Invalid(format!("traces of {shortest} tokens are shorter than window {window}")));
    }
    (window..=shortest)
        .map(|p| {
            let sum: f64 = seqs
                .iter()
                .map(|s| ttr(&s.as_ref()[p - window..p], window))
                .sum::<Result<f64>>()?;
            Ok(DecayPoint { position: p, mean_ttr: sum / seqs.len() as f64 })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapRecord {
    pub overlap: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<MatchLocation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_bleu: Option<f64>,
}

pub fn longest_overlap(seq: &[TokenId], set: &HyperfitSet) -> Result<OverlapRecord> {
    if seq.is_empty() {
        return Err(Error::Empty("overlap sequence"));
    }
    let o = set_overlap_index(set).longest_overlap(seq);
    Ok(OverlapRecord { overlap: o.length, location: o.location, dataset_bleu: None })
}

pub fn overlap_record(seq: &[TokenId], set: &HyperfitSet, index: &OverlapIndex) -> Result<OverlapRecord> {
    if seq.is_empty() {
        return Err(Error::Empty("overlap sequence"));
    }
    let o = index.longest_overlap(seq);
    let samples: Vec<&[TokenId]> = set.samples.iter().map(|s| s.tokens.as_slice()).collect();
    let b = dataset_bleu(tail(seq, DATASET_BLEU_WINDOW), &samples, DATASET_BLEU_WINDOW)?;
    Ok(OverlapRecord { overlap: o.length, location: o.location, dataset_bleu: Some(b) })
}

pub fn set_overlap_index(set: &HyperfitSet) -> OverlapIndex {
    OverlapIndex::new(&set.samples.iter().map(|s| s.tokens.as_slice()).collect::<Vec<_>>())
}

/// Fraction of sequences whose longest dataset overlap exceeds `k` tokens.
pub fn overlap_exceeds_ratio<S: AsRef<[TokenId]>>(seqs: &[S], set: &HyperfitSet, k: usize) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::Empty("overlap sequences"));
    }
    let idx = set_overlap_index(set);
    let hits = seqs.iter().filter(|s| idx.longest_overlap(s.as_ref()).length > k).count();
    Ok(hits as f64 / seqs.len() as f64)
}

/// `(overlap length, count)` for every length from 0 to the maximum.
pub fn overlap_histogram(overlaps: &[usize]) -> Vec<(usize, usize)> {
    let max = overlaps.iter().copied().max().unwrap_or(0);
    let mut bins = vec![0usize; max + 1];
    for &o in overlaps {
        bins[o] += 1;
    }
    bins.into_iter().enumerate().collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub dataset_id: String,
    pub config_hash: String,
    pub bleu_variant: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub index: usize,
    pub length: usize,
    pub ttr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_bleu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_bleu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nll_sum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nll_tokens: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub count: usize,
    pub ttr_mean: f64,
    pub self_bleu_mean: Option<f64>,
    pub self_bleu_max: Option<f64>,
    pub dataset_bleu_mean: Option<f64>,
    pub dataset_bleu_max: Option<f64>,
    pub overlap_mean: Option<f64>,
    pub overlap_max: Option<usize>,
    pub overlap_exceeds_ratio: Option<f64>,
    pub perplexity: Option<f64>,
}

fn mean_max(vals: &[f64]) -> (f64, f64) {
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    (mean, vals.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

impl Aggregates {
    /// Aggregates in index order; optional metrics only when every record has them.
    pub fn from_records(records: &[SequenceMetrics]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("metrics records"));
        }
        let all = |f: &dyn Fn(&SequenceMetrics) -> Option<f64>| -> Option<Vec<f64>> { records.iter().map(f).collect() };
        let ttrs: Vec<f64> = records.iter().map(|r| r.ttr).collect();
        let sb = all(&|r| r.self_bleu).map(|v| mean_max(&v));
        let db = all(&|r| r.dataset_bleu).map(|v| mean_max(&v));
        let ov: Option<Vec<usize>> = records.iter().map(|r| r.overlap).collect();
        let nll: Option<Vec<(f64, usize)>> = records.iter().map(|r| r.nll_sum.zip(r.nll_tokens)).collect();
        Ok(Self {
            count: records.len(),
            ttr_mean: ttrs.iter().sum::<f64>() / ttrs.len() as f64,
            self_bleu_mean: sb.map(|x| x.0),
            self_bleu_max: sb.map(|x| x.1),
            dataset_bleu_mean: db.map(|x| x.0),
            dataset_bleu_max: db.map(|x| x.1),
            overlap_mean: ov.as_ref().map(|v| v.iter().sum::<usize>() as f64 / v.len() as f64),
            overlap_max: ov.as_ref().and_then(|v| v.iter().copied().max()),
            overlap_exceeds_ratio: ov
                .as_ref()
                .map(|v| v.iter().filter(|&&o| o > OVERLAP_THRESHOLD).count() as f64 / v.len() as f64),
            perplexity: nll.map(|v| {
                let (s, n) = v.iter().fold((0.0, 0usize), |(s, n), &(a, b)| (s + a, n + b));
                (s / n as f64).exp()
            }),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub provenance: Provenance,
    pub ttr_window: usize,
    pub records: Vec<SequenceMetrics>,
    pub aggregates: Aggregates,
}

pub const BLEU_VARIANT: &str = "token BLEU-4, clipped precision, brevity penalty, eps=1e-9 zero-count smoothing, effective order for short candidates";

impl MetricsReport {
    /// Per-sequence metrics of `generations`; dataset metrics when `set` is
    /// given. Self-BLEU and Dataset BLEU use the last `ttr_window` tokens.
    pub fn analyze<S: AsRef<[TokenId]>>(
        generations: &[S],
        set: Option<&HyperfitSet>,
        nll: Option<&[(f64, usize)]>,
        ttr_window: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if generations.is_empty() {
            return Err(Error::Empty("generations"));
        }
        let tails: Vec<&[TokenId]> = generations.iter().map(|g| tail(g.as_ref(), ttr_window)).collect();
        let self_b = if tails.len() >= 2 { Some(self_bleu_per_sequence(&tails)?) } else { None };
        let dataset = set.map(|s| (s, set_overlap_index(s)));
        let mut records = Vec::with_capacity(generations.len());
        for (i, g) in generations.iter().enumerate() {
            let g = g.as_ref();
            let rec = match &dataset {
                Some((s, idx)) => Some(overlap_record(g, s, idx)?),
                None => None,
            };
            records.push(SequenceMetrics {
                index: i,
                length: g.len(),
                ttr: ttr(g, ttr_window)?,
                self_bleu: self_b.as_ref().map(|v| v[i]),
                dataset_bleu: rec.as_ref().and_then(|r| r.dataset_bleu),
                overlap: rec.as_ref().map(|r| r.overlap),
                nll_sum: nll.map(|v| v[i].0),
                nll_tokens: nll.map(|v| v[i].1),
            });
        }
        let aggregates = Aggregates::from_records(&records)?;
        Ok(Self { provenance, ttr_window, records, aggregates })
    }
}

#[cfg(test)]
mod tests;
