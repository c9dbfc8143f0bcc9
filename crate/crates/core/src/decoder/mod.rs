//! Autoregressive generation (greedy and nucleus sampling) with the n-gram
//! citation blocker and per-step tracing.

mod distribution;
mod ngram;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BoundaryTable, TokenId, TokenSequence};
use crate::error::{Error, Result};
use crate::model::{DecodeState, Parameters, Scalar};

pub use distribution::{argmax, logits_to_distribution, nucleus_filter, VocabDistribution};
pub use ngram::{hash_gram, NGramIndex, Occurrence};

pub const DEFAULT_BLOCK_N: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Sample { temperature: f64, top_p: f64, top_k: usize },
}

impl Strategy {
    /// Temperature 0.7, top-p 0.9, top-k 50.
    pub fn nucleus_baseline() -> Self {
        Strategy::Sample { temperature: 0.7, top_p: 0.9, top_k: 50 }
    }
}

#[derive(Clone, Debug)]
pub struct CitationBlockConfig {
    pub index: Arc<NGramIndex>,
    pub n: usize,
    pub defer_to_word_end: bool,
    /// Token boundary flags; without them every position counts as a word end.
    pub boundaries: Option<Arc<BoundaryTable>>,
}

impl CitationBlockConfig {
    pub fn new(index: Arc<NGramIndex>, defer_to_word_end: bool, boundaries: Option<Arc<BoundaryTable>>) -> Self {
        let n = index.n();
        Self { index, n, defer_to_word_end, boundaries }
    }

    fn starts_word(&self, token: TokenId) -> bool {
        self.boundaries
            .as_ref()
            .is_some_and(|b| b.starts_space.get(token as usize).copied().unwrap_or(false))
    }
}

#[derive(Clone, Debug)]
pub struct GenerationConfig {
    pub strategy: Strategy,
    pub max_new_tokens: usize,
    pub block: Option<CitationBlockConfig>,
    pub seed: u64,
}

impl GenerationConfig {
    pub fn greedy(max_new_tokens: usize) -> Self {
        Self { strategy: Strategy::Greedy, max_new_tokens, block: None, seed: 0 }
    }

    pub fn with_block(mut self, block: CitationBlockConfig) -> Self {
        self.block = Some(block);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEvent {
    pub matched: Vec<TokenId>,
    pub zeroed: Vec<TokenId>,
    /// The match was mid-word; only word-starting continuations were zeroed.
    pub deferred: bool,
    /// Blocking removed all mass and the fallback distribution was used.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub token: TokenId,
    pub entropy: f64,
    pub at1: f64,
    pub at3: f64,
    pub at5: f64,
    /// 1-based rank of the chosen token in the unfiltered distribution.
    pub rank: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<BlockEvent>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub steps: Vec<TraceStep>,
}

impl GenerationTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn tokens(&self) -> Vec<TokenId> {
        self.steps.iter().map(|s| s.token).collect()
    }
}

/// Zeroes every token that would extend a dataset occurrence of `recent`.
///
/// With `defer_to_word_end` set and `at_word_boundary` false, only
/// continuations that would themselves open a new word are zeroed, so the
/// current word can finish first.
pub fn apply_citation_block(
    dist: &VocabDistribution,
    recent: &[TokenId],
    cfg: &CitationBlockConfig,
    at_word_boundary: bool,
) -> (VocabDistribution, Option<BlockEvent>) {
    if recent.len() != cfg.n || !cfg.index.contains(recent) {
        return (dist.clone(), None);
    }
    let deferred = cfg.defer_to_word_end && !at_word_boundary;
    let mut zeroed = cfg.index.continuations(recent);
    if deferred {
        zeroed.retain(|&t| cfg.starts_word(t));
    }
    zeroed.retain(|&t| (t as usize) < dist.len());
    let mut event = BlockEvent { matched: recent.to_vec(), zeroed, deferred, fallback: false };
    if event.zeroed.is_empty() {
        return (dist.clone(), Some(event));
    }
    let mut w = dist.probs().to_vec();
    for &t in &event.zeroed {
        w[t as usize] = 0.0;
    }
    if let Ok(d) = VocabDistribution::from_weights(w) {
        return (d, Some(event));
    }
    event.fallback = true;
    let allowed: Vec<f64> = (0..dist.len() as TokenId)
        .map(|t| if event.zeroed.binary_search(&t).is_ok() { 0.0 } else { 1.0 })
        .collect();
    match VocabDistribution::from_weights(allowed) {
        Ok(d) => (d, Some(event)),
        Err(_) => (dist.clone(), Some(event)),
    }
}

fn sample_from(dist: &VocabDistribution, rng: &mut ChaCha8Rng) -> TokenId {
    let u: f64 = rng.random::<f64>() * dist.sum();
    let mut cum = 0.0;
    let mut last = dist.argmax();
    for (i, &p) in dist.probs().iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        last = i as TokenId;
        if u < cum {
            return last;
        }
    }
    last
}

/// Generates `cfg.max_new_tokens` tokens after `context`. The returned
/// sequence holds only the generated tokens.
pub fn generate<T: Scalar>(
    params: &Parameters<T>,
    context: &[TokenId],
    cfg: &GenerationConfig,
) -> Result<(TokenSequence, GenerationTrace)> {
    let max_ctx = params.config.max_ctx;
    if context.is_empty() {
        return Err(Error::Empty("generation context"));
    }
    if context.len() + cfg.max_new_tokens > max_ctx {
        return Err(Error::ContextLength { len: context.len() + cfg.max_new_tokens, max_ctx });
    }
    if cfg.max_new_tokens == 0 {
        return Err(Error::Invalid("max_new_tokens must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = DecodeState::new(params);
    let mut logits = state.prefill(params, context)?;
    let mut out: Vec<TokenId> = Vec::with_capacity(cfg.max_new_tokens);
    let mut trace = GenerationTrace::default();

    for step in 0..cfg.max_new_tokens {
        let raw = logits_to_distribution(&logits, 1.0)?;
        let mut dist = match cfg.strategy {
            Strategy::Greedy => raw.clone(),
            Strategy::Sample { temperature, .. } => logits_to_distribution(&logits, temperature)?,
        };
        let mut event = None;
        if let Some(block) = &cfg.block {
            if out.len() >= block.n {
                let recent = &out[out.len() - block.n..];
                let at_boundary = match &block.boundaries {
                    Some(b) => b.after_break(out.last().copied()),
                    None => true,
                };
                let (d, e) = apply_citation_block(&dist, recent, block, at_boundary);
                dist = d;
                event = e;
            }
        }
        let token = match cfg.strategy {
            Strategy::Greedy => dist.argmax(),
            Strategy::Sample { top_p, top_k, .. } => sample_from(&nucleus_filter(&dist, top_p, top_k), &mut rng),
        };
        trace.steps.push(TraceStep {
            token,
            entropy: raw.entropy(),
            at1: raw.top_mass(1),
            at3: raw.top_mass(3),
            at5: raw.top_mass(5),
            rank: raw.rank_of(token),
            block: event,
        });
        out.push(token);
        if step + 1 < cfg.max_new_tokens {
            logits = state.step(params, token)?;
        }
    }
    Ok((TokenSequence::new(out, "generated")?, trace))
}

#[cfg(test)]
mod tests;
