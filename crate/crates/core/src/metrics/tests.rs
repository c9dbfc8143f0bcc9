use super::*;
use crate::corpus::{OrderId, TokenSequence};
use proptest::prelude::*;

/// Straight-line BLEU-4 written from the definition with plain vectors.
fn naive_bleu(c: &[u32], r: &[u32]) -> f64 {
    let orders = c.len().min(4);
    let mut log_p = 0.0;
    for n in 1..=orders {
        let cg: Vec<&[u32]> = c.windows(n).collect();
        let rg: Vec<&[u32]> = r.windows(n).collect();
        let mut seen: Vec<&[u32]> = Vec::new();
        let mut matched = 0usize;
        for g in &cg {
            if seen.contains(g) {
                continue;
            }
            seen.push(g);
            let in_c = cg.iter().filter(|x| *x == g).count();
            let in_r = rg.iter().filter(|x| *x == g).count();
            matched += in_c.min(in_r);
        }
        let num = if matched == 0 { 1e-9 } else { matched as f64 };
        log_p += (num / cg.len() as f64).ln();
    }
    let bp = if c.len() < r.len() { (1.0 - r.len() as f64 / c.len() as f64).exp() } else { 1.0 };
    100.0 * bp * (log_p / orders as f64).exp()
}

fn naive_dataset_bleu(c: &[u32], samples: &[Vec<u32>], w: usize) -> f64 {
    let mut best = 0.0f64;
    for s in samples {
        if s.len() < w {
            continue;
        }
        for win in s.windows(w) {
            best = best.max(naive_bleu(c, win));
        }
    }
    best
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

fn set_of(samples: Vec<Vec<u32>>) -> HyperfitSet {
    let len = samples[0].len();
    let seqs = samples.into_iter().map(|t| TokenSequence::new(t, "t").unwrap()).collect();
    HyperfitSet::new(seqs, len, 0, OrderId::Base, 32).unwrap()
}

#[test]
fn bleu_hand_value() {
    // unigrams 4/4, bigrams 1/3, trigrams eps/2, 4-grams eps/1, no brevity penalty
    let c = [1, 2, 3, 4];
    let r = [1, 2, 4, 3];
    let exact = 100.0 * ((1.0f64 * (1.0 / 3.0) * (1e-9 / 2.0) * 1e-9).powf(0.25));
    assert!(close(bleu(&c, &r).unwrap(), exact));
}

#[test]
fn brevity_penalty_applies() {
    let r: Vec<u32> = (0..10).collect();
    let c: Vec<u32> = (0..5).collect();
    assert!(close(bleu(&c, &r).unwrap(), 100.0 * (1.0f64 - 2.0).exp()));
}

proptest! {
    #[test]
    fn bleu_matches_naive(c in prop::collection::vec(0u32..5, 1..20), r in prop::collection::vec(0u32..5, 1..20)) {
        let got = bleu(&c, &r).unwrap();
        prop_assert!(close(got, naive_bleu(&c, &r)), "{got} vs {}", naive_bleu(&c, &r));
        prop_assert!((0.0..=100.0 + 1e-9).contains(&got));
    }

    #[test]
    fn dataset_bleu_matches_exhaustive(
        c in prop::collection::vec(0u32..4, 1..14),
        samples in prop::collection::vec(prop::collection::vec(0u32..4, 1..24), 1..4),
        w in 1usize..12,
    ) {
        let got = dataset_bleu(&c, &samples, w).unwrap();
        let want = naive_dataset_bleu(&c, &samples, w);
        prop_assert!(close(got, want), "{got} vs {want}");
    }

    #[test]
    fn self_bleu_matches_naive(set in prop::collection::vec(prop::collection::vec(0u32..4, 1..12), 2..5)) {
        let per = self_bleu_per_sequence(&set).unwrap();
        for (i, &v) in per.iter().enumerate() {
            let want = (0..set.len()).filter(|&j| j != i).map(|j| naive_bleu(&set[i], &set[j])).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(close(v, want));
        }
    }

    #[test]
    fn ttr_in_unit_interval(seq in prop::collection::vec(0u32..50, 1..200), w in 1usize..128) {
        let t = ttr(&seq, w).unwrap();
        prop_assert!(t > 0.0 && t <= 1.0);
    }
}

#[test]
fn ttr_uses_tail_window() {
    let mut seq: Vec<u32> = (0..100).collect();
    seq.extend(std::iter::repeat_n(7, 96));
    assert!(close(ttr(&seq, 96).unwrap(), 1.0 / 96.0));
    assert!(close(ttr(&[1, 2, 2, 3], 96).unwrap(), 0.75));
    assert!(ttr(&[], 96).is_err());
}

#[test]
fn ttr_curve_tracks_decay() {
    let mut seq: Vec<u32> = (0..8).collect();
    seq.extend([0; 8]);
    let c = ttr_curve(&[seq], 8).unwrap();
    assert_eq!(c.len(), 9);
    assert!(close(c[0].mean_ttr, 1.0));
    assert!(close(c[8].mean_ttr, 1.0 / 8.0));
    assert!(ttr_curve(&[vec![1u32, 2]], 8).is_err());
}

#[test]
fn overlap_ratio_and_histogram() {
    let set = set_of(vec![(0..10).collect(), (10..20).collect()]);
    let seqs = vec![vec![0u32, 1, 2, 3, 4, 5, 6], vec![15, 3, 9], vec![12, 13, 14, 15, 16, 17]];
    assert!(close(overlap_exceeds_ratio(&seqs, &set, 5).unwrap(), 2.0 / 3.0));
    let rec = longest_overlap(&seqs[2], &set).unwrap();
    assert_eq!(rec.overlap, 6);
    let loc = rec.location.unwrap();
    assert_eq!((loc.sample, loc.sample_offset, loc.seq_offset), (1, 2, 0));
    assert_eq!(overlap_histogram(&[0, 2, 2, 5]), vec![(0, 1), (1, 0), (2, 2), (3, 0), (4, 0), (5, 1)]);
}

#[test]
fn report_aggregates_recompute_exactly() {
    let set = set_of(vec![(0..12).collect(), (4..16).collect()]);
    let gens = vec![vec![0u32, 1, 2, 3, 4, 5], vec![9, 9, 9, 3, 2], vec![4, 5, 6, 7, 1]];
    let nll = vec![(3.0, 5), (4.0, 4), (1.5, 4)];
    let rep = MetricsReport::analyze(&gens, Some(&set), Some(&nll), 96, Provenance::default()).unwrap();
    assert_eq!(rep.records.len(), 3);
    let again = Aggregates::from_records(&rep.records).unwrap();
    assert_eq!(again, rep.aggregates);
    assert!(close(rep.aggregates.perplexity.unwrap(), (8.5f64 / 13.0).exp()));
    assert_eq!(rep.aggregates.overlap_max, Some(6));
    let json = serde_json::to_string(&rep).unwrap();
    let back: MetricsReport = serde_json::from_str(&json).unwrap();
    assert_eq!(Aggregates::from_records(&back.records).unwrap(), rep.aggregates);
    assert!(MetricsReport::analyze::<Vec<u32>>(&[], None, None, 96, Provenance::default()).is_err());
}
