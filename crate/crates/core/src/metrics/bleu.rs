//! Token-level BLEU-4: clipped n-gram precision for n = 1..4, geometric mean,
//! brevity penalty, and epsilon smoothing of zero match counts.
//!
//! Orders longer than the candidate are dropped from the mean, so short but
//! identical sequences still score 100.

use std::collections::HashMap;

use crate::corpus::TokenId;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;
pub const SMOOTHING_EPS: f64 = 1e-9;

fn pack(gram: &[TokenId]) -> u128 {
    gram.iter().fold(0u128, |k, &t| (k << 32) | t as u128)
}

/// n-gram counts of one sequence, per order.
#[derive(Clone, Debug)]
pub struct NGramProfile {
    len: usize,
    counts: [HashMap<u128, u32>; MAX_ORDER],
}

impl NGramProfile {
    pub fn new(tokens: &[TokenId]) -> Self {
        let mut counts: [HashMap<u128, u32>; MAX_ORDER] = Default::default();
        for (n, map) in counts.iter_mut().enumerate() {
            for g in tokens.windows(n + 1) {
                *map.entry(pack(g)).or_default() += 1;
            }
        }
        Self { len: tokens.len(), counts }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Combines per-order clipped match counts into a score in [0, 100].
pub(crate) fn score_from_matches(matches: &[usize; MAX_ORDER], cand_len: usize, ref_len: usize) -> f64 {
    let orders = cand_len.min(MAX_ORDER);
    let mut log_sum = 0.0;
    for (n, &m) in matches.iter().enumerate().take(orders) {
        let total = (cand_len - n) as f64;
        let num = if m > 0 { m as f64 } else { SMOOTHING_EPS };
        log_sum += (num / total).ln();
    }
    let bp = if cand_len >= ref_len { 1.0 } else { (1.0 - ref_len as f64 / cand_len as f64).exp() };
    100.0 * bp * (log_sum / orders as f64).exp()
}

pub fn bleu_profiles(candidate: &NGramProfile, reference: &NGramProfile) -> f64 {
    let mut matches = [0usize; MAX_ORDER];
    for ((m, cand), refs) in matches.iter_mut().zip(&candidate.counts).zip(&reference.counts) {
        *m = cand
            .iter()
            .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)) as usize)
            .sum();
    }
    score_from_matches(&matches, candidate.len, reference.len)
}

pub fn bleu(candidate: &[TokenId], reference: &[TokenId]) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::Empty("bleu input"));
    }
    Ok(bleu_profiles(&NGramProfile::new(candidate), &NGramProfile::new(reference)))
}

/// Per-sequence highest BLEU against any other member of the set; returns
/// the mean and max of those highest values.
pub fn self_bleu<S: AsRef<[TokenId]>>(set: &[S]) -> Result<(f64, f64)> {
    let best = self_bleu_per_sequence(set)?;
    let mean = best.iter().sum::<f64>() / best.len() as f64;
    let max = best.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((mean, max))
}

pub fn self_bleu_per_sequence<S: AsRef<[TokenId]>>(set: &[S]) -> Result<Vec<f64>> {
    if set.len() < 2 {
        return Err(Error::Invalid("self-BLEU needs at least 2 sequences".into()));
    }
    if set.iter().any(|s| s.as_ref().is_empty()) {
        return Err(Error::Empty("self-BLEU sequence"));
    }
    let profiles: Vec<NGramProfile> = set.iter().map(|s| NGramProfile::new(s.as_ref())).collect();
    Ok((0..profiles.len())
        .map(|i| {
            (0..profiles.len())
                .filter(|&j| j != i)
                .map(|j| bleu_profiles(&profiles[i], &profiles[j]))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect())
}

/// Highest BLEU of `candidate` against any `window`-token slice of any
/// sample. Samples shorter than `window` contribute nothing.
///
/// Slides each window one token at a time while maintaining clipped match
/// counts incrementally, so every window is scored exactly in O(1) after
/// the first.
pub fn dataset_bleu<S: AsRef<[TokenId]>>(candidate: &[TokenId], samples: &[S], window: usize) -> Result<f64> {
    if candidate.is_empty() {
        return Err(Error::Empty("dataset BLEU candidate"));
    }
    if window == 0 {
        return Err(Error::Invalid("window must be at least 1".into()));
    }
    // per order: gram -> (count in candidate, count in current window)
    let mut tables: Vec<HashMap<u128, (u32, u32)>> = vec![HashMap::new(); MAX_ORDER];
    for (n, table) in tables.iter_mut().enumerate() {
        for g in candidate.windows(n + 1) {
            table.entry(pack(g)).or_insert((0, 0)).0 += 1;
        }
    }
    let mut best = 0.0f64;
    for sample in samples {
        let s = sample.as_ref();
        if s.len() < window {
            continue;
        }
        for table in tables.iter_mut() {
            for v in table.values_mut() {
                v.1 = 0;
            }
        }
        let mut matches = [0usize; MAX_ORDER];
        let add = |table: &mut HashMap<u128, (u32, u32)>, g: &[TokenId], m: &mut usize| {
            if let Some(e) = table.get_mut(&pack(g)) {
                if e.1 < e.0 {
                    *m += 1;
                }
                e.1 += 1;
            }
        };
        let remove = |table: &mut HashMap<u128, (u32, u32)>, g: &[TokenId], m: &mut usize| {
            if let Some(e) = table.get_mut(&pack(g)) {
                e.1 -= 1;
                if e.1 < e.0 {
                    *m -= 1;
                }
            }
        };
        for n in 0..MAX_ORDER {
            for g in s[..window].windows(n + 1) {
                add(&mut tables[n], g, &mut matches[n]);
            }
        }
        best = best.max(score_from_matches(&matches, candidate.len(), window));
        for start in 1..=s.len() - window {
            for n in 0..MAX_ORDER {
                let order = n + 1;
                if order > window {
                    continue;
                }
                remove(&mut tables[n], &s[start - 1..start - 1 + order], &mut matches[n]);
                let last = start + window - order;
                add(&mut tables[n], &s[last..last + order], &mut matches[n]);
            }
            best = best.max(score_from_matches(&matches, candidate.len(), window));
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_100() {
        let a = [1, 2, 3, 4, 5, 6];
        assert!((bleu(&a, &a).unwrap() - 100.0).abs() < 1e-9);
        assert!((bleu(&[7, 8], &[7, 8]).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_is_near_zero() {
        assert!(bleu(&[1, 2, 3, 4, 5], &[6, 7, 8, 9, 10]).unwrap() < 1e-6);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(bleu(&[], &[1]).is_err());
        assert!(self_bleu(&[vec![1u32]]).is_err());
    }

    #[test]
    fn self_bleu_of_identical_set() {
        let s = vec![vec![1u32, 2, 3, 4, 5]; 3];
        let (avg, max) = self_bleu(&s).unwrap();
        assert!((avg - 100.0).abs() < 1e-9 && (max - 100.0).abs() < 1e-9);
    }

    #[test]
    fn dataset_bleu_finds_verbatim_window() {
        let sample: Vec<u32> = (0..120).collect();
        let cand: Vec<u32> = (10..106).collect();
        assert!((dataset_bleu(&cand, std::slice::from_ref(&sample), 96).unwrap() - 100.0).abs() < 1e-9);
        let alien: Vec<u32> = (500..596).collect();
        assert!(dataset_bleu(&alien, &[sample], 96).unwrap() < 1e-6);
    }
}
