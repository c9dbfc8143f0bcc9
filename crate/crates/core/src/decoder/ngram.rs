//! Exact n-gram index over a hyperfit set: rolling-hash buckets verified
//! against the stored tokens, so lookups have no false positives.

use std::collections::HashMap;

use crate::corpus::{HyperfitSet, TokenId};
use crate::error::{Error, Result};

const MOD: u64 = (1 << 61) - 1;
const BASE: u64 = 1_000_003;

fn mul_mod(a: u64, b: u64) -> u64 {
    let p = (a as u128) * (b as u128);
    let lo = (p as u64) & MOD;
    let hi = (p >> 61) as u64;
    let s = lo + hi;
    if s >= MOD {
        s - MOD
    } else {
        s
    }
}

fn add_mod(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= MOD {
        s - MOD
    } else {
        s
    }
}

fn sub_mod(a: u64, b: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + MOD - b
    }
}

pub fn hash_gram(gram: &[TokenId]) -> u64 {
    gram.iter().fold(0, |h, &t| add_mod(mul_mod(h, BASE), t as u64 + 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Occurrence {
    pub sample: u32,
    pub offset: u32,
}

#[derive(Clone, Debug)]
pub struct NGramIndex {
    n: usize,
    samples: Vec<Vec<TokenId>>,
    buckets: HashMap<u64, Vec<Occurrence>>,
}

impl NGramIndex {
    pub fn build(set: &HyperfitSet, n: usize) -> Result<Self> {
        Self::from_sequences(set.samples.iter().map(|s| s.tokens.clone()).collect(), n)
    }

    pub fn from_sequences(samples: Vec<Vec<TokenId>>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("n-gram order must be at least 1".into()));
        }
        let top = (1..n).fold(1, |acc, _| mul_mod(acc, BASE));
        let mut buckets: HashMap<u64, Vec<Occurrence>> = HashMap::new();
        for (si, s) in samples.iter().enumerate() {
            if s.len() < n {
                continue;
            }
            let mut h = hash_gram(&s[..n]);
            for off in 0..=s.len() - n {
                if off > 0 {
                    h = sub_mod(h, mul_mod(s[off - 1] as u64 + 1, top));
                    h = add_mod(mul_mod(h, BASE), s[off + n - 1] as u64 + 1);
                }
                buckets.entry(h).or_default().push(Occurrence { sample: si as u32, offset: off as u32 });
            }
        }
        Ok(Self { n, samples, buckets })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn samples(&self) -> &[Vec<TokenId>] {
        &self.samples
    }

    /// Every verified occurrence of `gram`, in (sample, offset) order.
    pub fn occurrences(&self, gram: &[TokenId]) -> Vec<Occurrence> {
        if gram.len() != self.n {
            return Vec::new();
        }
        let Some(cands) = self.buckets.get(&hash_gram(gram)) else {
            return Vec::new();
        };
        cands
            .iter()
            .copied()
            .filter(|o| {
                let s = &self.samples[o.sample as usize];
                &s[o.offset as usize..o.offset as usize + self.n] == gram
            })
            .collect()
    }

    pub fn contains(&self, gram: &[TokenId]) -> bool {
        !self.occurrences(gram).is_empty()
    }

    /// Sorted distinct tokens that follow any occurrence of `gram`.
    pub fn continuations(&self, gram: &[TokenId]) -> Vec<TokenId> {
        let mut next: Vec<TokenId> = self
            .occurrences(gram)
            .into_iter()
            .filter_map(|o| self.samples[o.sample as usize].get(o.offset as usize + self.n).copied())
            .collect();
        next.sort_unstable();
        next.dedup();
        next
    }
}
