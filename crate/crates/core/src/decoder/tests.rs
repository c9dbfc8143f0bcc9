use super::*;
use crate::corpus::Tokenizer;
use crate::model::ModelConfig;

// a..f as token ids 0..5 over a vocabulary of 8
const SAMPLE: [TokenId; 6] = [0, 1, 2, 3, 4, 5];

fn index() -> Arc<NGramIndex> {
    Arc::new(NGramIndex::from_sequences(vec![SAMPLE.to_vec()], 5).unwrap())
}

fn spread(vocab: usize) -> VocabDistribution {
    VocabDistribution::from_weights((1..=vocab).map(|i| i as f64).collect()).unwrap()
}

/// Tokens following `gram` anywhere in `samples`, by direct scan.
fn scan_continuations(samples: &[Vec<TokenId>], gram: &[TokenId]) -> Vec<TokenId> {
    let mut out = Vec::new();
    for s in samples {
        for i in 0..s.len() {
            if i + gram.len() < s.len() && &s[i..i + gram.len()] == gram {
                out.push(s[i + gram.len()]);
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

#[test]
fn absent_gram_leaves_distribution() {
    let cfg = CitationBlockConfig::new(index(), false, None);
    let d = spread(8);
    let (out, ev) = apply_citation_block(&d, &[1, 2, 3, 4, 6], &cfg, true);
    assert_eq!(out, d);
    assert!(ev.is_none());
}

#[test]
fn matched_gram_zeroes_its_continuation() {
    let cfg = CitationBlockConfig::new(index(), false, None);
    let d = spread(8);
    let recent = [0, 1, 2, 3, 4];
    let (out, ev) = apply_citation_block(&d, &recent, &cfg, true);
    let blocked = scan_continuations(&[SAMPLE.to_vec()], &recent);
    assert_eq!(blocked, vec![5]);
    assert_eq!(out.prob(5), 0.0);
    let rest: f64 = d.probs().iter().enumerate().filter(|(i, _)| *i != 5).map(|(_, p)| p).sum();
    for t in 0..8u32 {
        if t != 5 {
            assert!((out.prob(t) - d.prob(t) / rest).abs() < 1e-15);
        }
    }
    assert_eq!(ev.unwrap().zeroed, vec![5]);
}

#[test]
fn blocking_all_mass_falls_back_to_uniform_remainder() {
    let cfg = CitationBlockConfig::new(index(), false, None);
    let mut w = vec![0.0; 8];
    w[5] = 1.0;
    let d = VocabDistribution::new(w).unwrap();
    let (out, ev) = apply_citation_block(&d, &[0, 1, 2, 3, 4], &cfg, true);
    assert!(ev.unwrap().fallback);
    assert_eq!(out.prob(5), 0.0);
    assert!((out.prob(0) - 1.0 / 7.0).abs() < 1e-15);
}

#[test]
fn deferred_block_waits_for_word_end() {
    // Byte tokens: the set contains "hello world"; the blocker sees "hello"
    // mid-word ("hell" + "o") and only acts once the word is complete.
    let tok = Tokenizer::byte();
    let text = tok.encode(b"say hello world now");
    let idx = Arc::new(NGramIndex::from_sequences(vec![text.clone()], 5).unwrap());
    let table = Arc::new(tok.boundary_table());
    let cfg = CitationBlockConfig::new(idx, true, Some(table.clone()));
    let d = VocabDistribution::uniform(256);

    // step 1: recent = "y hel", previous token 'l' is mid-word
    let recent1 = tok.encode(b"y hel");
    assert!(!table.after_break(recent1.last().copied()));
    let (out1, ev1) = apply_citation_block(&d, &recent1, &cfg, false);
    assert_eq!(out1, d, "continuation 'l' does not open a word, nothing to zero");
    assert!(ev1.unwrap().deferred);

    // step 2: recent = "hello", the continuation ' ' would start a new word
    let recent2 = tok.encode(b"hello");
    let (out2, ev2) = apply_citation_block(&d, &recent2, &cfg, false);
    assert_eq!(out2.prob(b' ' as u32), 0.0);
    assert_eq!(ev2.unwrap().zeroed, vec![b' ' as u32]);

    // with deferral off the mid-word match is blocked immediately
    let eager = CitationBlockConfig { defer_to_word_end: false, ..cfg.clone() };
    let (out3, _) = apply_citation_block(&d, &recent1, &eager, false);
    assert_eq!(out3.prob(b'l' as u32), 0.0);
}

fn toy_params() -> Parameters<f64> {
    let cfg = ModelConfig { n_layers: 1, n_heads: 2, d_model: 8, d_ff: 16, vocab_size: 8, max_ctx: 40, dropout: 0.0 };
    Parameters::init(&cfg, 9).unwrap()
}

#[test]
fn greedy_and_sampling_are_deterministic() {
    let p = toy_params();
    let g = GenerationConfig::greedy(20);
    assert_eq!(generate(&p, &[0, 1, 2], &g).unwrap(), generate(&p, &[0, 1, 2], &g).unwrap());
    let s = GenerationConfig { strategy: Strategy::nucleus_baseline(), seed: 4, ..g.clone() };
    let (a, ta) = generate(&p, &[0, 1, 2], &s).unwrap();
    let (b, _) = generate(&p, &[0, 1, 2], &s).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.len(), 20);
    assert_eq!(a.source_tag, "generated");
}

#[test]
fn greedy_matches_argmax_of_full_forward() {
    let p = toy_params();
    let (out, trace) = generate(&p, &[3, 1], &GenerationConfig::greedy(10)).unwrap();
    let mut seq = vec![3, 1];
    for &t in &out.tokens {
        let l = crate::model::forward(&p, &seq).unwrap();
        assert_eq!(argmax(l.row(seq.len() - 1)), t);
        seq.push(t);
    }
    assert!(trace.steps.iter().all(|s| s.rank == 1));
}

#[test]
fn context_overflow_is_rejected() {
    let p = toy_params();
    assert!(matches!(
        generate(&p, &[0; 30], &GenerationConfig::greedy(11)),
        Err(Error::ContextLength { .. })
    ));
}
