//! Lossless tokenizers: raw bytes, UTF-8 characters with byte fallback, and
//! a small byte-level BPE.
//!
//! Every mode keeps ids `0..256` as the raw bytes, so any byte string encodes
//! and decodes back to itself.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    Byte,
    Char,
    Bpe,
}

impl std::str::FromStr for TokenizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "byte" => Ok(TokenizerMode::Byte),
            "char" => Ok(TokenizerMode::Char),
            "bpe" => Ok(TokenizerMode::Bpe),
            other => Err(Error::Invalid(format!("unknown tokenizer mode '{other}'"))),
        }
    }
}

/// Serialized form of a tokenizer. Pieces are derived from it on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub mode: TokenizerMode,
    /// Multi-byte characters, in id order starting at 256 (char mode).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chars: Vec<String>,
    /// Ordered merges, the merge at index `i` produces id `256 + i` (bpe mode).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merges: Vec<(u32, u32)>,
}

#[derive(Clone, Debug)]
pub struct Tokenizer {
    spec: TokenizerSpec,
    pieces: Vec<Vec<u8>>,
    char_ids: HashMap<Vec<u8>, u32>,
    merge_rank: HashMap<(u32, u32), u32>,
}

impl PartialEq for Tokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl Tokenizer {
    pub fn byte() -> Self {
        Self::from_spec(TokenizerSpec { mode: TokenizerMode::Byte, chars: vec![], merges: vec![] })
            .expect("byte tokenizer is always valid")
    }

    /// Character tokenizer over the `vocab_size - 256` most frequent
    /// multi-byte characters of `corpus`.
    pub fn train_char(corpus: &str, vocab_size: usize) -> Result<Self> {
        if vocab_size < 256 {
            return Err(Error::Config(format!("char vocab_size {vocab_size} < 256")));
        }
        let mut counts: HashMap<char, usize> = HashMap::new();
        for c in corpus.chars().filter(|c| c.len_utf8() > 1) {
            *counts.entry(c).or_default() += 1;
        }
        let mut ranked: Vec<(char, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let chars = ranked
            .into_iter()
            .take(vocab_size - 256)
            .map(|(c, _)| c.to_string())
            .collect();
        Self::from_spec(TokenizerSpec { mode: TokenizerMode::Char, chars, merges: vec![] })
    }

    /// Byte-level BPE. Merges never cross a chunk boundary, where a chunk is
    /// an optional run of leading whitespace followed by non-whitespace bytes.
    pub fn train_bpe(corpus: &[u8], vocab_size: usize) -> Result<Self> {
        if vocab_size < 256 {
            return Err(Error::Config(format!("bpe vocab_size {vocab_size} < 256")));
        }
        let mut chunk_counts: HashMap<&[u8], usize> = HashMap::new();
        for chunk in chunks(corpus) {
            *chunk_counts.entry(chunk).or_default() += 1;
        }
        let mut words: Vec<(Vec<u32>, usize)> = chunk_counts
            .into_iter()
            .map(|(c, n)| (c.iter().map(|&b| b as u32).collect(), n))
            .collect();
        words.sort();

        let mut merges = Vec::new();
        while 256 + merges.len() < vocab_size {
            let mut pairs: HashMap<(u32, u32), usize> = HashMap::new();
            for (w, n) in &words {
                for p in w.windows(2) {
                    *pairs.entry((p[0], p[1])).or_default() += n;
                }
            }
            let Some((&best, _)) = pairs
                .iter()
                .filter(|(_, &n)| n >= 2)
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            else {
                break;
            };
            let new_id = 256 + merges.len() as u32;
            for (w, _) in words.iter_mut() {
                *w = merge_pair(w, best, new_id);
            }
            merges.push(best);
        }
        Self::from_spec(TokenizerSpec { mode: TokenizerMode::Bpe, chars: vec![], merges })
    }

    pub fn from_spec(spec: TokenizerSpec) -> Result<Self> {
        let mut pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut char_ids = HashMap::new();
        let mut merge_rank = HashMap::new();
        match spec.mode {
            TokenizerMode::Byte => {}
            TokenizerMode::Char => {
                for c in &spec.chars {
                    let bytes = c.as_bytes().to_vec();
                    if c.chars().count() != 1 || bytes.len() < 2 {
                        return Err(Error::Config(format!("char entry {c:?} is not one multi-byte char")));
                    }
                    if char_ids.insert(bytes.clone(), pieces.len() as u32).is_some() {
                        return Err(Error::Config(format!("duplicate char entry {c:?}")));
                    }
                    pieces.push(bytes);
                }
            }
            TokenizerMode::Bpe => {
                for (rank, &(a, b)) in spec.merges.iter().enumerate() {
                    let n = pieces.len() as u32;
                    if a >= n || b >= n {
                        return Err(Error::Config(format!("merge {rank} references unknown id")));
                    }
                    let mut piece = pieces[a as usize].clone();
                    piece.extend_from_slice(&pieces[b as usize]);
                    pieces.push(piece);
                    merge_rank.insert((a, b), rank as u32);
                }
            }
        }
        Ok(Self { spec, pieces, char_ids, merge_rank })
    }

    pub fn spec(&self) -> &TokenizerSpec {
        &self.spec
    }

    pub fn mode(&self) -> TokenizerMode {
        self.spec.mode
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    pub fn encode(&self, bytes: &[u8]) -> Vec<u32> {
        match self.spec.mode {
            TokenizerMode::Byte => bytes.iter().map(|&b| b as u32).collect(),
            TokenizerMode::Char => self.encode_chars(bytes),
            TokenizerMode::Bpe => {
                let mut out = Vec::with_capacity(bytes.len());
                for chunk in chunks(bytes) {
                    out.extend(self.encode_chunk(chunk));
                }
                out
            }
        }
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            let piece = self
                .piece(id)
                .ok_or(Error::TokenOutOfRange { id, vocab_size: self.vocab_size() })?;
            out.extend_from_slice(piece);
        }
        Ok(out)
    }

    pub fn decode_lossy(&self, ids: &[u32]) -> String {
        let bytes: Vec<u8> = ids.iter().filter_map(|&id| self.piece(id)).flatten().copied().collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    fn encode_chars(&self, bytes: &[u8]) -> Vec<u32> {
        let mut out = Vec::with_capacity(bytes.len());
        let mut i = 0;
        while i < bytes.len() {
            let width = utf8_width(bytes[i]);
            if width > 1 && i + width <= bytes.len() {
                let cand = &bytes[i..i + width];
                if std::str::from_utf8(cand).is_ok() {
                    if let Some(&id) = self.char_ids.get(cand) {
                        out.push(id);
                        i += width;
                        continue;
                    }
                }
            }
            out.push(bytes[i] as u32);
            i += 1;
        }
        out
    }

    fn encode_chunk(&self, chunk: &[u8]) -> Vec<u32> {
        let mut ids: Vec<u32> = chunk.iter().map(|&b| b as u32).collect();
        loop {
            let best = ids
                .windows(2)
                .filter_map(|p| self.merge_rank.get(&(p[0], p[1])).map(|&r| (r, (p[0], p[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            ids = merge_pair(&ids, pair, 256 + rank);
        }
        ids
    }

    /// Per-token word boundary flags used by the citation blocker.
    pub fn boundary_table(&self) -> BoundaryTable {
        let starts_space = self
            .pieces
            .iter()
            .map(|p| p.first().is_some_and(|b| b.is_ascii_whitespace()))
            .collect();
        let ends_break = self
            .pieces
            .iter()
            .map(|p| p.last().is_some_and(|b| b.is_ascii_whitespace() || b.is_ascii_punctuation()))
            .collect();
        BoundaryTable { starts_space, ends_break }
    }
}

/// Word boundary rule: a token begins a new word iff its bytes start with
/// whitespace or the previous token's bytes end with whitespace or
/// punctuation. The first token of a sequence always begins a word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryTable {
    pub starts_space: Vec<bool>,
    pub ends_break: Vec<bool>,
}

impl BoundaryTable {
    pub fn begins_word(&self, prev: Option<u32>, token: u32) -> bool {
        let starts = self.starts_space.get(token as usize).copied().unwrap_or(false);
        let after_break = match prev {
            None => true,
            Some(p) => self.ends_break.get(p as usize).copied().unwrap_or(false),
        };
        starts || after_break
    }

    /// True when whatever follows `prev` begins a new word.
    pub fn after_break(&self, prev: Option<u32>) -> bool {
        prev.is_none_or(|p| self.ends_break.get(p as usize).copied().unwrap_or(false))
    }

    /// Lengths, in tokens, of the words of `tokens`.
    pub fn word_lengths(&self, tokens: &[u32]) -> Vec<usize> {
        let mut lengths = Vec::new();
        let mut prev = None;
        for &t in tokens {
            if self.begins_word(prev, t) || lengths.is_empty() {
                lengths.push(0);
            }
            *lengths.last_mut().unwrap() += 1;
            prev = Some(t);
        }
        lengths
    }
}

fn utf8_width(lead: u8) -> usize {
    match lead {
        0x00..=0x7f => 1,
        0xc0..=0xdf => 2,
        0xe0..=0xef => 3,
        0xf0..=0xf7 => 4,
        _ => 1,
    }
}

fn merge_pair(ids: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

fn chunks(bytes: &[u8]) -> impl Iterator<Item = &[u8]> {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= bytes.len() {
            return None;
        }
        let mut i = start;
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let chunk = &bytes[start..i];
        start = i;
        Some(chunk)
    })
}
