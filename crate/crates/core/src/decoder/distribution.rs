use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::model::Scalar;

/// A next-token probability vector.
#[derive(Clone, Debug, PartialEq)]
pub struct VocabDistribution {
    probs: Vec<f64>,
}

impl VocabDistribution {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("distribution"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Invalid("probabilities must be finite and non-negative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights; all-zero weights are rejected.
    pub fn from_weights(mut w: Vec<f64>) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::Invalid("weights have no mass".into()));
        }
        for x in w.iter_mut() {
            *x /= sum;
        }
        Ok(Self { probs: w })
    }

    pub fn uniform(vocab: usize) -> Self {
        Self { probs: vec![1.0 / vocab as f64; vocab] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs.get(token as usize).copied().unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }

    /// Token ids by descending probability, ties by ascending id.
    pub fn ranked(&self) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = (0..self.probs.len() as TokenId).collect();
        ids.sort_by(|&a, &b| {
            self.probs[b as usize].total_cmp(&self.probs[a as usize]).then(a.cmp(&b))
        });
        ids
    }

    /// Accumulated probability of the `k` most probable tokens.
    pub fn top_mass(&self, k: usize) -> f64 {
        let mut p = self.probs.clone();
        p.sort_by(|a, b| b.total_cmp(a));
        p.iter().take(k).sum()
    }

    /// Most probable token, lowest id on ties.
    pub fn argmax(&self) -> TokenId {
        argmax(&self.probs)
    }

    /// 1-based rank of `token` under `ranked` ordering.
    pub fn rank_of(&self, token: TokenId) -> usize {
        let p = self.prob(token);
        1 + self
            .probs
            .iter()
            .enumerate()
            .filter(|&(i, &q)| q > p || (q == p && (i as TokenId) < token))
            .count()
    }

    pub fn support(&self) -> Vec<TokenId> {
        (0..self.probs.len() as TokenId).filter(|&i| self.probs[i as usize] > 0.0).collect()
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> TokenId {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best as TokenId
}

/// `softmax(row / temperature)`, computed in f64.
pub fn logits_to_distribution<T: Scalar>(row: &[T], temperature: f64) -> Result<VocabDistribution> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Invalid(format!("temperature must be positive, got {temperature}")));
    }
    if row.is_empty() {
        return Err(Error::Empty("logits row"));
    }
    if row.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits row"));
    }
    let scaled: Vec<f64> = row.iter().map(|x| x.as_f64() / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scaled.iter().map(|x| (x - max).exp()).collect();
    VocabDistribution::from_weights(w)
}

/// Keeps the most probable tokens up to cumulative mass `top_p`, at most
/// `top_k` of them, and renormalizes.
pub fn nucleus_filter(dist: &VocabDistribution, top_p: f64, top_k: usize) -> VocabDistribution {
    let ranked = dist.ranked();
    let k = top_k.clamp(1, ranked.len());
    let keep = if top_p >= 1.0 {
        k
    } else {
        let mut cum = 0.0;
        let mut n = 0;
        for &id in &ranked {
            n += 1;
            cum += dist.prob(id);
            if cum >= top_p {
                break;
            }
        }
        n.min(k)
    };
    let mut w = vec![0.0; dist.len()];
    for &id in &ranked[..keep] {
        w[id as usize] = dist.prob(id);
    }
    if keep == ranked.len() {
        return dist.clone();
    }
    VocabDistribution::from_weights(w).unwrap_or_else(|_| {
        let mut one = vec![0.0; dist.len()];
        one[ranked[0] as usize] = 1.0;
        VocabDistribution { probs: one }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_logits_are_uniform() {
        let d = logits_to_distribution(&[0.0f64; 4], 1.0).unwrap();
        assert!(d.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        assert!((d.entropy() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn low_temperature_concentrates() {
        let d = logits_to_distribution(&[10.0f64, 0.0, 0.0, 0.0], 0.01).unwrap();
        assert!(d.top_mass(1) > 1.0 - 1e-12);
        assert!(d.entropy() < 1e-12);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(logits_to_distribution(&[f64::NAN, 0.0], 1.0).is_err());
        assert!(logits_to_distribution(&[0.0f64, 0.0], 0.0).is_err());
    }

    #[test]
    fn nucleus_hand_case() {
        let d = VocabDistribution::new(vec![0.5, 0.3, 0.15, 0.05]).unwrap();
        let f = nucleus_filter(&d, 0.9, 50);
        let expect = [0.5 / 0.95, 0.3 / 0.95, 0.15 / 0.95, 0.0];
        for (a, b) in f.probs().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((f.probs()[0] - 0.526_315_789_473_684_2).abs() < 1e-12);
    }

    #[test]
    fn nucleus_identity_and_one_hot() {
        let d = VocabDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(nucleus_filter(&d, 1.0, 4), d);
        let one = nucleus_filter(&d, 0.9, 1);
        assert_eq!(one.probs(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ties_break_by_lowest_id() {
        let d = VocabDistribution::new(vec![0.25, 0.25, 0.25, 0.25]).unwrap();
        assert_eq!(d.argmax(), 0);
        assert_eq!(d.ranked(), vec![0, 1, 2, 3]);
        assert_eq!(d.rank_of(2), 3);
        assert_eq!(nucleus_filter(&d, 0.5, 50).support(), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn distributions_stay_valid(row in proptest::collection::vec(-30.0f64..30.0, 1..64), t in 0.05f64..5.0, p in 0.01f64..1.0, k in 1usize..80) {
            let d = logits_to_distribution(&row, t).unwrap();
            let f = nucleus_filter(&d, p, k);
            let ln_v = (row.len() as f64).ln();
            for x in [&d, &f] {
                prop_assert!((x.sum() - 1.0).abs() < 1e-6);
                prop_assert!(x.entropy() >= -1e-12 && x.entropy() <= ln_v + 1e-9);
            }
            let orig = d.support();
            prop_assert!(f.support().iter().all(|s| orig.contains(s)));
            prop_assert_eq!(d.argmax(), argmax(&row));
        }
    }
}
