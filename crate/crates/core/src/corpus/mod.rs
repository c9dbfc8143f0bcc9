//! Corpus ingestion, fixed-length sample extraction and the sample-order
//! variants used by the determinacy experiment.

mod io;
pub mod synthetic;
mod tokenizer;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    read_set, read_set_bytes, read_tokenizer, set_to_bytes, sidecar_path, write_set, write_tokenizer, SetProvenance,
};
pub use tokenizer::{BoundaryTable, Tokenizer, TokenizerMode, TokenizerSpec};

pub type TokenId = u32;

pub const DEFAULT_SAMPLE_LEN: usize = 256;
pub const DEFAULT_CONTEXT_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<TokenId>,
    pub source_tag: String,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>, source_tag: impl Into<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        Ok(Self { tokens, source_tag: source_tag.into() })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match self.tokens.iter().find(|&&t| t as usize >= vocab_size) {
            Some(&id) => Err(Error::TokenOutOfRange { id, vocab_size }),
            None => Ok(()),
        }
    }
}

impl AsRef<[TokenId]> for TokenSequence {
    fn as_ref(&self) -> &[TokenId] {
        &self.tokens
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrderId {
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "shuffle-1")]
    Shuffle1,
    #[serde(rename = "shuffle-all")]
    ShuffleAll,
}

impl OrderId {
    pub fn as_str(self) -> &'static str {
        match self {
            OrderId::Base => "base",
            OrderId::Shuffle1 => "shuffle-1",
            OrderId::ShuffleAll => "shuffle-all",
        }
    }
}

impl std::str::FromStr for OrderId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(OrderId::Base),
            "shuffle-1" => Ok(OrderId::Shuffle1),
            "shuffle-all" => Ok(OrderId::ShuffleAll),
            other => Err(Error::Invalid(format!("unknown order id '{other}'"))),
        }
    }
}

/// The small training set used for hyperfitting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperfitSet {
    pub samples: Vec<TokenSequence>,
    pub sample_len: usize,
    pub seed: u64,
    pub order_id: OrderId,
    pub vocab_size: usize,
}

impl HyperfitSet {
    /// Builds a set and checks that every sample has length `sample_len`
    /// and only uses ids below `vocab_size`.
    pub fn new(
        samples: Vec<TokenSequence>,
        sample_len: usize,
        seed: u64,
        order_id: OrderId,
        vocab_size: usize,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("hyperfit set"));
        }
        for s in &samples {
            if s.len() != sample_len {
                return Err(Error::LengthMismatch { expected: sample_len, actual: s.len() });
            }
            s.validate(vocab_size)?;
        }
        Ok(Self { samples, sample_len, seed, order_id, vocab_size })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Keeps the first `n` samples.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::Capacity(format!("cannot take {n} of {} samples", self.len())));
        }
        let mut out = self.clone();
        out.samples.truncate(n);
        Ok(out)
    }

    /// Sorted sample token lists, for multiset comparisons between variants.
    pub fn sample_multiset(&self) -> Vec<&[TokenId]> {
        let mut v: Vec<&[TokenId]> = self.samples.iter().map(|s| s.tokens.as_slice()).collect();
        v.sort();
        v
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextPair {
    pub context: TokenSequence,
    pub continuation: TokenSequence,
}

impl ContextPair {
    pub fn joined(&self) -> Vec<TokenId> {
        let mut v = self.context.tokens.clone();
        v.extend_from_slice(&self.continuation.tokens);
        v
    }
}

/// Tokenizes UTF-8 text.
pub fn ingest(raw: &[u8], tok: &Tokenizer, source_tag: &str) -> Result<TokenSequence> {
    if raw.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    std::str::from_utf8(raw).map_err(|e| Error::Decode { offset: e.valid_up_to() })?;
    TokenSequence::new(tok.encode(raw), source_tag)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct SampleOptions {
    pub allow_overlap: bool,
}

pub fn sample_sequences(
    stream: &TokenSequence,
    n: usize,
    len: usize,
    seed: u64,
) -> Result<HyperfitSet> {
    sample_sequences_with(stream, n, len, seed, SampleOptions::default())
}

/// Draws `n` windows of `len` tokens at random offsets.
///
/// Without overlap the free slack `|stream| - n*len` is split into `n + 1`
/// random gaps, which makes every non-overlapping placement reachable. The
/// resulting windows are then put in random order.
pub fn sample_sequences_with(
    stream: &TokenSequence,
    n: usize,
    len: usize,
    seed: u64,
    opts: SampleOptions,
) -> Result<HyperfitSet> {
    let offsets = sample_offsets(stream.len(), n, len, seed, opts)?;
    let samples = offsets
        .into_iter()
        .map(|o| TokenSequence {
            tokens: stream.tokens[o..o + len].to_vec(),
            source_tag: stream.source_tag.clone(),
        })
        .collect();
    let vocab_size = stream.tokens.iter().max().map_or(1, |&m| m as usize + 1);
    HyperfitSet::new(samples, len, seed, OrderId::Base, vocab_size)
}

pub(crate) fn sample_offsets(
    stream_len: usize,
    n: usize,
    len: usize,
    seed: u64,
    opts: SampleOptions,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Invalid("n must be at least 1".into()));
    }
    if len == 0 || stream_len < len {
        return Err(Error::Capacity(format!("stream of {stream_len} tokens is shorter than {len}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if opts.allow_overlap {
        return Ok((0..n).map(|_| rng.random_range(0..=stream_len - len)).collect());
    }
    let needed = n.checked_mul(len).ok_or_else(|| Error::Capacity("n * len overflows".into()))?;
    if needed > stream_len {
        return Err(Error::Capacity(format!(
            "{n} non-overlapping windows of {len} need {needed} tokens, stream has {stream_len}"
        )));
    }
    let slack = stream_len - needed;
    let mut cuts: Vec<usize> = (0..n).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut offsets: Vec<usize> = cuts.iter().enumerate().map(|(i, &c)| c + i * len).collect();
    offsets.shuffle(&mut rng);
    Ok(offsets)
}

/// Windows drawn from a random tiling of the stream that pass `keep`.
pub fn sample_filtered(
    stream: &TokenSequence,
    n: usize,
    len: usize,
    seed: u64,
    keep: impl Fn(&[TokenId]) -> bool,
) -> Result<Vec<TokenSequence>> {
    if n == 0 || len == 0 {
        return Err(Error::Invalid("n and len must be at least 1".into()));
    }
    let tiles = stream.len() / len;
    if tiles < n {
        return Err(Error::Capacity(format!("stream holds {tiles} windows of {len}, need {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.random_range(0..=stream.len() - tiles * len);
    let mut starts: Vec<usize> = (0..tiles).map(|i| phase + i * len).collect();
    starts.shuffle(&mut rng);
    let out: Vec<TokenSequence> = starts
        .into_iter()
        .map(|o| &stream.tokens[o..o + len])
        .filter(|w| keep(w))
        .take(n)
        .map(|w| TokenSequence { tokens: w.to_vec(), source_tag: stream.source_tag.clone() })
        .collect();
    if out.len() < n {
        return Err(Error::Capacity(format!("only {} of {n} windows pass the filter", out.len())));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShuffleMode {
    #[serde(rename = "shuffle-1")]
    SwapOne,
    #[serde(rename = "shuffle-all")]
    All,
}

pub fn make_shuffle_variant(base: &HyperfitSet, mode: ShuffleMode, seed: u64) -> Result<HyperfitSet> {
    if base.order_id != OrderId::Base {
        return Err(Error::Invalid(format!(
            "shuffle variants are derived from the base order, got {}",
            base.order_id.as_str()
        )));
    }
    if base.len() < 2 {
        return Err(Error::Invalid("a set of one sample has no other order".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = base.clone();
    match mode {
        ShuffleMode::SwapOne => {
            let i = rng.random_range(0..base.len());
            let mut j = rng.random_range(0..base.len() - 1);
            if j >= i {
                j += 1;
            }
            out.samples.swap(i, j);
            out.order_id = OrderId::Shuffle1;
        }
        ShuffleMode::All => {
            out.samples.shuffle(&mut rng);
            out.order_id = OrderId::ShuffleAll;
        }
    }
    Ok(out)
}

pub fn split_context(seq: &TokenSequence, ctx_len: usize) -> Result<ContextPair> {
    if ctx_len == 0 || seq.len() <= ctx_len {
        return Err(Error::Invalid(format!(
            "sequence of {} tokens cannot be split at context length {ctx_len}",
            seq.len()
        )));
    }
    let (c, r) = seq.tokens.split_at(ctx_len);
    Ok(ContextPair {
        context: TokenSequence { tokens: c.to_vec(), source_tag: seq.source_tag.clone() },
        continuation: TokenSequence { tokens: r.to_vec(), source_tag: seq.source_tag.clone() },
    })
}

/// Automated stand-in for manual quality validation: at least 90% of the
/// decoded characters are printable (whitespace counts as printable).
pub fn is_printable_text(bytes: &[u8]) -> bool {
    let text = String::from_utf8_lossy(bytes);
    let (mut total, mut good) = (0usize, 0usize);
    for c in text.chars() {
        total += 1;
        if c != char::REPLACEMENT_CHARACTER && (!c.is_control() || c.is_whitespace()) {
            good += 1;
        }
    }
    total > 0 && good * 10 >= total * 9
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stream(n: usize) -> TokenSequence {
        TokenSequence::new((0..n as u32).map(|i| i % 251).collect(), "test").unwrap()
    }

    fn abc() -> HyperfitSet {
        let s = |t: u32| TokenSequence::new(vec![t; 4], "t").unwrap();
        HyperfitSet::new(vec![s(0), s(1), s(2)], 4, 0, OrderId::Base, 3).unwrap()
    }

    #[test]
    fn ingest_bytes() {
        let tok = Tokenizer::byte();
        assert_eq!(ingest(b"abc", &tok, "x").unwrap().tokens, vec![97, 98, 99]);
        assert!(matches!(ingest(b"", &tok, "x"), Err(Error::Empty(_))));
        assert!(matches!(ingest(b"ab\xffc", &tok, "x"), Err(Error::Decode { offset: 2 })));
        let text = "x".repeat(1234);
        assert_eq!(ingest(text.as_bytes(), &tok, "x").unwrap().len(), 1234);
    }

    #[test]
    fn two_windows_tile_exactly() {
        let set = sample_sequences(&stream(512), 2, 256, 7).unwrap();
        let mut firsts: Vec<u32> = set.samples.iter().map(|s| s.tokens[0]).collect();
        firsts.sort();
        assert_eq!(firsts, vec![0, 256 % 251]);
        assert!(set.samples.iter().all(|s| s.len() == 256));
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = stream(20_000);
        assert_eq!(sample_sequences(&s, 50, 256, 3).unwrap(), sample_sequences(&s, 50, 256, 3).unwrap());
        assert_ne!(sample_sequences(&s, 50, 256, 3).unwrap(), sample_sequences(&s, 50, 256, 4).unwrap());
    }

    #[test]
    fn sampling_capacity_error() {
        assert!(matches!(sample_sequences(&stream(300), 2, 256, 0), Err(Error::Capacity(_))));
        let ok = sample_sequences_with(&stream(300), 2, 256, 0, SampleOptions { allow_overlap: true });
        assert_eq!(ok.unwrap().len(), 2);
    }

    #[test]
    fn swap_one_can_swap_first_pair() {
        let base = abc();
        let target: Vec<u32> = vec![1, 0, 2];
        let hit = (0..64).any(|seed| {
            let v = make_shuffle_variant(&base, ShuffleMode::SwapOne, seed).unwrap();
            v.samples.iter().map(|s| s.tokens[0]).collect::<Vec<_>>() == target
        });
        assert!(hit);
    }

    #[test]
    fn shuffle_all_preserves_multiset() {
        let base = abc();
        let v = make_shuffle_variant(&base, ShuffleMode::All, 11).unwrap();
        assert_eq!(v.order_id, OrderId::ShuffleAll);
        assert_eq!(v.sample_multiset(), base.sample_multiset());
    }

    #[test]
    fn shuffle_rejects_singletons_and_non_base() {
        let single = abc().truncated(1).unwrap();
        assert!(make_shuffle_variant(&single, ShuffleMode::All, 0).is_err());
        let v = make_shuffle_variant(&abc(), ShuffleMode::All, 0).unwrap();
        assert!(make_shuffle_variant(&v, ShuffleMode::SwapOne, 0).is_err());
    }

    #[test]
    fn split_context_lengths() {
        let p = split_context(&stream(256), 32).unwrap();
        assert_eq!((p.context.len(), p.continuation.len()), (32, 224));
        let p = split_context(&stream(33), 32).unwrap();
        assert_eq!((p.context.len(), p.continuation.len()), (32, 1));
        assert!(split_context(&stream(32), 32).is_err());
    }

    #[test]
    fn printable_filter() {
        assert!(is_printable_text(b"hello world\n"));
        assert!(!is_printable_text(&[0u8, 1, 2, 3, b'a']));
        assert!(!is_printable_text(b""));
    }

    #[test]
    fn filtered_sampling_respects_predicate() {
        let s = stream(4096);
        let got = sample_filtered(&s, 4, 64, 1, |w| w[0] % 2 == 0).unwrap();
        assert_eq!(got.len(), 4);
        assert!(got.iter().all(|w| w.tokens[0] % 2 == 0));
    }

    proptest! {
        #[test]
        fn non_overlapping_windows_are_disjoint(len in 1usize..40, n in 1usize..10, extra in 0usize..200, seed in any::<u64>()) {
            let total = n * len + extra;
            let mut offs = sample_offsets(total, n, len, seed, SampleOptions::default()).unwrap();
            offs.sort();
            for w in offs.windows(2) {
                prop_assert!(w[1] >= w[0] + len);
            }
            prop_assert!(offs.last().unwrap() + len <= total);
        }

        #[test]
        fn swap_one_changes_two_positions(n in 2usize..30, seed in any::<u64>()) {
            let samples = (0..n as u32).map(|i| TokenSequence::new(vec![i, i], "t").unwrap()).collect();
            let base = HyperfitSet::new(samples, 2, 0, OrderId::Base, n.max(2)).unwrap();
            let v = make_shuffle_variant(&base, ShuffleMode::SwapOne, seed).unwrap();
            let changed = base.samples.iter().zip(&v.samples).filter(|(a, b)| a != b).count();
            prop_assert_eq!(changed, 2);
            prop_assert_eq!(v.sample_multiset(), base.sample_multiset());
        }

        #[test]
        fn split_concatenates(len in 2usize..100, ctx in 1usize..99) {
            prop_assume!(ctx < len);
            let s = stream(len);
            let p = split_context(&s, ctx).unwrap();
            prop_assert_eq!(p.joined(), s.tokens);
        }
    }
}
