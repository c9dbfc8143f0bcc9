//! Scripted experiment protocols: loss/TTR curves, sample-order
//! determinacy, sample-quantity sweeps, dataset overlap, prediction
//! sharpness and TTR decay.
//!
//! Every protocol has an in-memory entry point taking loaded models and
//! data, and [`run`] drives one from an [`ExperimentSpec`] file.

mod spec;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{make_shuffle_variant, BoundaryTable, HyperfitSet, ShuffleMode, TokenId, TokenSequence};
use crate::decoder::{generate, CitationBlockConfig, GenerationConfig, NGramIndex, Strategy};
use crate::error::{Error, Result};
use crate::metrics::{
    dataset_bleu, overlap_histogram, perplexity, sequence_prediction_stats, set_overlap_index, ttr, ttr_curve,
    AgreementMatrix, DecayPoint, MatchLocation, DATASET_BLEU_WINDOW, OVERLAP_THRESHOLD, TTR_WINDOW,
};
use crate::model::{Parameters, Scalar};
use crate::trainer::{hyperfit, hyperfit_constant_updates, LossCurve, StopReason, TrainConfig, Validation};

pub use spec::{
    run, run_in, BlockSpec, Environment, ExperimentKind, ExperimentSpec, GenerationSpec, ModelRef, RunReport,
    REPORT_FILE, TIMING_FILE,
};

/// First `context_len` tokens of each of at most `limit` held-out sequences.
pub fn contexts(held: &[TokenSequence], context_len: usize, limit: usize) -> Result<Vec<Vec<TokenId>>> {
    if held.is_empty() {
        return Err(Error::Empty("held-out sequences"));
    }
    held.iter()
        .take(limit)
        .map(|s| {
            if s.len() < context_len {
                return Err(Error::Invalid(format!("held-out sequence of {} tokens < context {context_len}", s.len())));
            }
            Ok(s.tokens[..context_len].to_vec())
        })
        .collect()
}

/// Generations from every context; sampled strategies use `seed + i` for
/// the i-th context.
pub fn generate_all<T: Scalar>(
    params: &Parameters<T>,
    ctxs: &[Vec<TokenId>],
    cfg: &GenerationConfig,
) -> Result<Vec<Vec<TokenId>>> {
    ctxs.iter()
        .enumerate()
        .map(|(i, c)| {
            let cfg = GenerationConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.clone() };
            Ok(generate(params, c, &cfg)?.0.tokens)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveOutput {
    pub curve: LossCurve,
    pub stop: StopReason,
    pub steps: usize,
}

/// Hyperfits `base` on `set`, tracking validation loss, entropy and the
/// greedy TTR of generations from the validation contexts.
pub fn loss_curve<T: Scalar>(
    base: &Parameters<T>,
    set: &HyperfitSet,
    val: &Validation,
    cfg: &TrainConfig,
) -> Result<(CurveOutput, Parameters<T>)> {
    let run = hyperfit(base.clone(), set, val, cfg)?;
    Ok((CurveOutput { curve: run.curve, stop: run.stop, steps: run.steps }, run.params))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeterminacyOutput {
    pub matrix: AgreementMatrix,
    pub final_train_loss: Vec<f64>,
    /// Agreement between order variants reported for large models.
    pub reference_agreement: f64,
}

pub const REFERENCE_AGREEMENT: f64 = 0.70;

/// The base order, one swapped pair, and a full reshuffle of `set`.
pub fn order_variants(set: &HyperfitSet, seed: u64) -> Result<[HyperfitSet; 3]> {
    Ok([
        set.clone(),
        make_shuffle_variant(set, ShuffleMode::SwapOne, seed)?,
        make_shuffle_variant(set, ShuffleMode::All, seed)?,
    ])
}

/// Hyperfits one run per set and compares their top-1 predictions on
/// `held`. All sets must hold the same multiset of samples.
pub fn determinacy<T: Scalar>(
    base: &Parameters<T>,
    sets: &[HyperfitSet],
    held: &[TokenSequence],
    val: &Validation,
    cfg: &TrainConfig,
) -> Result<(DeterminacyOutput, Vec<Parameters<T>>)> {
    let Some(first) = sets.first() else {
        return Err(Error::Empty("determinacy sets"));
    };
    let reference = first.sample_multiset();
    for s in &sets[1..] {
        if s.sample_multiset() != reference {
            return Err(Error::Invalid(format!("set {} holds different samples than {}", s.order_id.as_str(), first.order_id.as_str())));
        }
    }
    let mut models = Vec::with_capacity(sets.len());
    let mut losses = Vec::with_capacity(sets.len());
    for s in sets {
        let run = hyperfit(base.clone(), s, val, cfg)?;
        losses.push(run.curve.last().map_or(f64::NAN, |r| r.train_loss));
        models.push(run.params);
    }
    let labels: Vec<String> = sets.iter().map(|s| s.order_id.as_str().to_string()).collect();
    let named: Vec<(&str, &Parameters<T>)> = labels.iter().map(String::as_str).zip(&models).collect();
    let matrix = AgreementMatrix::build(&named, held)?;
    Ok((DeterminacyOutput { matrix, final_train_loss: losses, reference_agreement: REFERENCE_AGREEMENT }, models))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantityPoint {
    pub n_samples: usize,
    pub mean_ttr: f64,
    pub final_train_loss: f64,
    pub warnings: Vec<String>,
}

/// Constant-update hyperfits on the first `n` samples of `set` for each
/// count, scored by the TTR of the first `TTR_WINDOW` greedy tokens.
pub fn quantity_sweep<T: Scalar>(
    base: &Parameters<T>,
    set: &HyperfitSet,
    counts: &[usize],
    total_updates: usize,
    ctxs: &[Vec<TokenId>],
    val: &Validation,
    cfg: &TrainConfig,
) -> Result<Vec<QuantityPoint>> {
    if counts.is_empty() {
        return Err(Error::Empty("sample counts"));
    }
    if total_updates == 0 {
        return Err(Error::Invalid("total_updates must be at least 1".into()));
    }
    let gen = GenerationConfig::greedy(TTR_WINDOW);
    counts
        .iter()
        .map(|&n| {
            let sub = set.truncated(n)?;
            let run = hyperfit_constant_updates(base.clone(), &sub, total_updates, val, cfg)?;
            let gens = generate_all(&run.params, ctxs, &gen)?;
            let sum = gens.iter().map(|g| ttr(g, TTR_WINDOW)).sum::<Result<f64>>()?;
            Ok(QuantityPoint {
                n_samples: n,
                mean_ttr: sum / gens.len() as f64,
                final_train_loss: run.curve.last().map_or(f64::NAN, |r| r.train_loss),
                warnings: run.warnings,
            })
        })
        .collect()
}

/// A model under study, optionally decoded with the citation blocker.
pub struct Variant<'a, T> {
    pub label: String,
    pub params: &'a Parameters<T>,
    pub block: Option<BlockSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapSequence {
    pub overlap: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<MatchLocation>,
    pub dataset_bleu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapVariant {
    pub label: String,
    pub blocked: Option<BlockSpec>,
    pub histogram: Vec<(usize, usize)>,
    pub max_overlap: usize,
    pub exceeds_threshold_ratio: f64,
    pub longer_than_10_ratio: f64,
    /// Largest overlap the blocker permits: `n` without deferral, `n` plus
    /// the longest word seen in the generations with it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_holds: Option<bool>,
    pub records: Vec<OverlapSequence>,
}

/// Citation blocker over `set` as configured by `spec`.
pub fn block_config(set: &HyperfitSet, spec: &BlockSpec, boundaries: Option<&Arc<BoundaryTable>>) -> Result<CitationBlockConfig> {
    if spec.defer_to_word_end && boundaries.is_none() {
        return Err(Error::Config("deferring to word ends needs the tokenizer".into()));
    }
    let index = Arc::new(NGramIndex::build(set, spec.n)?);
    Ok(CitationBlockConfig::new(index, spec.defer_to_word_end, boundaries.cloned()))
}

/// Longest dataset overlap and Dataset BLEU of every variant's
/// generations, with per-variant histograms.
pub fn overlap_study<T: Scalar>(
    variants: &[Variant<'_, T>],
    set: &HyperfitSet,
    ctxs: &[Vec<TokenId>],
    gen: &GenerationConfig,
    boundaries: Option<&Arc<BoundaryTable>>,
) -> Result<Vec<OverlapVariant>> {
    if variants.len() < 2 {
        return Err(Error::Invalid("the overlap study compares at least 2 variants".into()));
    }
    let idx = set_overlap_index(set);
    let samples: Vec<&[TokenId]> = set.samples.iter().map(|s| s.tokens.as_slice()).collect();
    variants
        .iter()
        .map(|v| {
            let mut cfg = gen.clone();
            cfg.block = match &v.block {
                Some(b) => Some(block_config(set, b, boundaries)?),
                None => None,
            };
            let gens = generate_all(v.params, ctxs, &cfg)?;
            let mut records = Vec::with_capacity(gens.len());
            for g in &gens {
                let o = idx.longest_overlap(g);
                let tail = &g[g.len().saturating_sub(DATASET_BLEU_WINDOW)..];
                records.push(OverlapSequence {
                    overlap: o.length,
                    location: o.location,
                    dataset_bleu: dataset_bleu(tail, &samples, DATASET_BLEU_WINDOW)?,
                });
            }
            let lens: Vec<usize> = records.iter().map(|r| r.overlap).collect();
            let max_overlap = lens.iter().copied().max().unwrap_or(0);
            let ratio = |k: usize| lens.iter().filter(|&&o| o > k).count() as f64 / lens.len() as f64;
            let bound = match (&v.block, boundaries) {
                (Some(b), _) if !b.defer_to_word_end => Some(b.n),
                (Some(b), Some(table)) => {
                    Some(b.n + gens.iter().flat_map(|g| table.word_lengths(g)).max().unwrap_or(0))
                }
                _ => None,
            };
            Ok(OverlapVariant {
                label: v.label.clone(),
                blocked: v.block.clone(),
                histogram: overlap_histogram(&lens),
                max_overlap,
                exceeds_threshold_ratio: ratio(OVERLAP_THRESHOLD),
                longer_than_10_ratio: ratio(10),
                bound,
                bound_holds: bound.map(|b| max_overlap <= b),
                records,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessRow {
    pub label: String,
    pub perplexity: f64,
    pub entropy: f64,
    pub at1: f64,
    pub at3: f64,
    pub at5: f64,
}

/// Perplexity, mean entropy and top-1/3/5 mass over the held-out originals.
pub fn sharpness_study<T: Scalar>(models: &[(&str, &Parameters<T>)], held: &[TokenSequence]) -> Result<Vec<SharpnessRow>> {
    if models.is_empty() {
        return Err(Error::Empty("models"));
    }
    let seqs: Vec<&[TokenId]> = held.iter().map(|s| s.tokens.as_slice()).collect();
    models
        .iter()
        .map(|(label, p)| {
            let st = sequence_prediction_stats(*p, &seqs)?;
            Ok(SharpnessRow {
                label: label.to_string(),
                perplexity: perplexity(*p, &seqs)?,
                entropy: st.entropy,
                at1: st.at1,
                at3: st.at3,
                at5: st.at5,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub label: String,
    pub points: Vec<DecayPoint>,
}

/// TTR of the most recent `TTR_WINDOW` tokens against generation length.
pub fn decay_study<T: Scalar>(
    models: &[(&str, &Parameters<T>)],
    ctxs: &[Vec<TokenId>],
    gen: &GenerationConfig,
) -> Result<Vec<DecayCurve>> {
    if models.is_empty() {
        return Err(Error::Empty("models"));
    }
    models
        .iter()
        .map(|(label, p)| {
            let gens = generate_all(*p, ctxs, gen)?;
            Ok(DecayCurve { label: label.to_string(), points: ttr_curve(&gens, TTR_WINDOW)? })
        })
        .collect()
}

/// Per-kind experiment result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outputs {
    Curve(CurveOutput),
    Determinacy(DeterminacyOutput),
    Quantity { points: Vec<QuantityPoint> },
    Overlap { variants: Vec<OverlapVariant> },
    Sharpness { rows: Vec<SharpnessRow> },
    Decay { curves: Vec<DecayCurve> },
}

impl Outputs {
    /// Figure-ready tables as `(file name, CSV rows)`; the first row is the header.
    pub fn tables(&self) -> BTreeMap<String, Vec<Vec<String>>> {
        let mut t = BTreeMap::new();
        let s = |x: f64| x.to_string();
        match self {
            Outputs::Curve(c) => {
                let mut rows = vec![hdr(&["epoch", "step", "train_loss", "val_loss", "ttr", "entropy"])];
                rows.extend(c.curve.rows.iter().map(|r| {
                    vec![
                        r.epoch.to_string(),
                        r.step.to_string(),
                        s(r.train_loss),
                        s(r.val_loss),
                        s(r.mean_greedy_ttr),
                        s(r.mean_pred_entropy),
                    ]
                }));
                t.insert("curve.csv".into(), rows);
            }
            Outputs::Determinacy(d) => {
                let mut head = vec!["model".to_string()];
                head.extend(d.matrix.labels.iter().cloned());
                let mut rows = vec![head];
                for (i, l) in d.matrix.labels.iter().enumerate() {
                    let mut r = vec![l.clone()];
                    r.extend(d.matrix.values[i].iter().map(|&v| s(v)));
                    rows.push(r);
                }
                t.insert("agreement.csv".into(), rows);
            }
            Outputs::Quantity { points } => {
                let mut rows = vec![hdr(&["n_samples", "mean_ttr", "final_train_loss"])];
                rows.extend(points.iter().map(|p| vec![p.n_samples.to_string(), s(p.mean_ttr), s(p.final_train_loss)]));
                t.insert("quantity.csv".into(), rows);
            }
            Outputs::Overlap { variants } => {
                let mut rows = vec![hdr(&["variant", "overlap", "count"])];
                for v in variants {
                    rows.extend(v.histogram.iter().map(|&(b, c)| vec![v.label.clone(), b.to_string(), c.to_string()]));
                }
                t.insert("overlap_histogram.csv".into(), rows);
                let mut rows = vec![hdr(&["variant", "index", "overlap", "dataset_bleu"])];
                for v in variants {
                    rows.extend(v.records.iter().enumerate().map(|(i, r)| {
                        vec![v.label.clone(), i.to_string(), r.overlap.to_string(), s(r.dataset_bleu)]
                    }));
                }
                t.insert("overlap_records.csv".into(), rows);
            }
            Outputs::Sharpness { rows: r } => {
                let mut rows = vec![hdr(&["model", "perplexity", "entropy", "at1", "at3", "at5"])];
                rows.extend(
                    r.iter().map(|x| vec![x.label.clone(), s(x.perplexity), s(x.entropy), s(x.at1), s(x.at3), s(x.at5)]),
                );
                t.insert("sharpness.csv".into(), rows);
            }
            Outputs::Decay { curves } => {
                let mut rows = vec![hdr(&["model", "position", "ttr"])];
                for c in curves {
                    rows.extend(c.points.iter().map(|p| vec![c.label.clone(), p.position.to_string(), s(p.mean_ttr)]));
                }
                t.insert("decay.csv".into(), rows);
            }
        }
        t
    }
}

fn hdr(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

/// Greedy unless the spec asks for sampling.
pub fn generation_config(g: &GenerationSpec) -> GenerationConfig {
    GenerationConfig { strategy: g.strategy.unwrap_or(Strategy::Greedy), max_new_tokens: g.max_new_tokens, block: None, seed: g.seed }
}

#[cfg(test)]
mod tests;
