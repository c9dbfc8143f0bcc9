//! `HFS1` binary record for hyperfit sets.
//!
//! Layout, all integers little-endian:
//! `"HFS1"` | vocab_size u32 | n u32 | sample_len u32 | seed u64 |
//! order_id length u32 | order_id utf-8 | n*sample_len token ids u32.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HyperfitSet, OrderId, TokenSequence, Tokenizer, TokenizerMode};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HFS1";

/// JSON sidecar written next to every `HFS1` file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetProvenance {
    pub sources: Vec<String>,
    pub tokenizer: TokenizerMode,
    pub vocab_size: usize,
    pub n: usize,
    pub sample_len: usize,
    pub seed: u64,
    pub order_id: OrderId,
    pub tokens_sha256: String,
}

impl SetProvenance {
    pub fn describe(set: &HyperfitSet, sources: Vec<String>, tokenizer: TokenizerMode) -> Self {
        let mut h = Sha256::new();
        for s in &set.samples {
            for t in &s.tokens {
                h.update(t.to_le_bytes());
            }
        }
        Self {
            sources,
            tokenizer,
            vocab_size: set.vocab_size,
            n: set.len(),
            sample_len: set.sample_len,
            seed: set.seed,
            order_id: set.order_id,
            tokens_sha256: hex::encode(h.finalize()),
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn set_to_bytes(set: &HyperfitSet) -> Vec<u8> {
    let order = set.order_id.as_str().as_bytes();
    let mut out = Vec::with_capacity(28 + order.len() + 4 * set.len() * set.sample_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(set.vocab_size as u32).to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&(set.sample_len as u32).to_le_bytes());
    out.extend_from_slice(&set.seed.to_le_bytes());
    out.extend_from_slice(&(order.len() as u32).to_le_bytes());
    out.extend_from_slice(order);
    for s in &set.samples {
        for t in &s.tokens {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    out
}

pub fn read_set_bytes(bytes: &[u8], origin: &Path) -> Result<HyperfitSet> {
    let bad = |why: &str| Error::format(origin, why);
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4).ok_or_else(|| bad("truncated magic"))? != MAGIC {
        return Err(bad("missing HFS1 magic"));
    }
    let vocab_size = cur.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let n = cur.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let sample_len = cur.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let seed = cur.u64().ok_or_else(|| bad("truncated header"))?;
    let order_len = cur.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let order = cur.take(order_len).ok_or_else(|| bad("truncated order id"))?;
    let order_id: OrderId = std::str::from_utf8(order)
        .map_err(|_| bad("order id is not utf-8"))?
        .parse()
        .map_err(|_| bad("unknown order id"))?;
    let body = n
        .checked_mul(sample_len)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| bad("size overflow"))?;
    let data = cur.take(body).ok_or_else(|| bad("truncated token payload"))?;
    if cur.pos != bytes.len() {
        return Err(bad("trailing bytes after token payload"));
    }
    let tag = origin.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let samples = data
        .chunks_exact(4 * sample_len.max(1))
        .map(|chunk| TokenSequence {
            tokens: chunk.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect(),
            source_tag: tag.clone(),
        })
        .collect();
    HyperfitSet::new(samples, sample_len, seed, order_id, vocab_size)
}

pub fn write_set(path: &Path, set: &HyperfitSet, provenance: &SetProvenance) -> Result<()> {
    std::fs::write(path, set_to_bytes(set)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(provenance)?;
    std::fs::write(&side, json).map_err(|e| Error::io(side, e))
}

pub fn read_set(path: &Path) -> Result<HyperfitSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_set_bytes(&bytes, path)
}

pub fn write_tokenizer(path: &Path, tok: &Tokenizer) -> Result<()> {
    let json = serde_json::to_vec_pretty(tok.spec())?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_tokenizer(path: &Path) -> Result<Tokenizer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let spec = serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    Tokenizer::from_spec(spec)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_shuffle_variant, sample_sequences, ShuffleMode};

    fn set() -> HyperfitSet {
        let stream = TokenSequence::new((0..4000u32).map(|i| (i * 7) % 256).collect(), "s").unwrap();
        let mut set = sample_sequences(&stream, 5, 64, 9).unwrap();
        set.vocab_size = 256;
        set
    }

    #[test]
    fn header_layout_is_fixed() {
        let set = set();
        let bytes = set_to_bytes(&set);
        assert_eq!(&bytes[..4], b"HFS1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 256);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 64);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 9);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 4);
        assert_eq!(&bytes[28..32], b"base");
        assert_eq!(bytes.len(), 32 + 5 * 64 * 4);
        let first = u32::from_le_bytes(bytes[32..36].try_into().unwrap());
        assert_eq!(first, set.samples[0].tokens[0]);
    }

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.hfs");
        let set = make_shuffle_variant(&set(), ShuffleMode::SwapOne, 3).unwrap();
        let prov = SetProvenance::describe(&set, vec!["a.txt".into()], TokenizerMode::Byte);
        write_set(&path, &set, &prov).unwrap();
        let back = read_set(&path).unwrap();
        assert_eq!(back.samples.iter().map(|s| &s.tokens).collect::<Vec<_>>(),
                   set.samples.iter().map(|s| &s.tokens).collect::<Vec<_>>());
        assert_eq!(back.order_id, OrderId::Shuffle1);
        let side: SetProvenance =
            serde_json::from_slice(&std::fs::read(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(side, prov);
    }

    #[test]
    fn rejects_corrupt_input() {
        let bytes = set_to_bytes(&set());
        let p = Path::new("x.hfs");
        assert!(read_set_bytes(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_set_bytes(&bad, p).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(read_set_bytes(&extra, p).is_err());
    }
}
