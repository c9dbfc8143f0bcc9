//! The citation blocker against a model that has memorized its set.

use std::sync::Arc;

use hyperfit::corpus::{BoundaryTable, HyperfitSet, OrderId, TokenId, TokenSequence};
use hyperfit::decoder::{generate, CitationBlockConfig, GenerationConfig, NGramIndex};
use hyperfit::model::{ModelConfig, Parameters};
use hyperfit::trainer::{hyperfit, TrainConfig, Validation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: usize = 16;

fn brute_overlap(a: &[TokenId], samples: &[TokenSequence]) -> usize {
    let mut best = 0;
    for s in samples {
        for i in 0..a.len() {
            for j in 0..s.tokens.len() {
                let mut k = 0;
                while i + k < a.len() && j + k < s.tokens.len() && a[i + k] == s.tokens[j + k] {
                    k += 1;
                }
                best = best.max(k);
            }
        }
    }
    best
}

/// Tokens 0..4 open a word, tokens 12..16 close one.
fn boundaries() -> Arc<BoundaryTable> {
    Arc::new(BoundaryTable {
        starts_space: (0..VOCAB).map(|t| t < 4).collect(),
        ends_break: (0..VOCAB).map(|t| t >= 12).collect(),
    })
}

fn memorized() -> (Parameters<f64>, HyperfitSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples: Vec<TokenSequence> = (0..4)
        .map(|_| TokenSequence::new((0..48).map(|_| rng.random_range(0..VOCAB as TokenId)).collect(), "s").unwrap())
        .collect();
    let set = HyperfitSet::new(samples, 48, 9, OrderId::Base, VOCAB).unwrap();
    let cfg = ModelConfig { n_layers: 1, n_heads: 2, d_model: 32, d_ff: 64, vocab_size: VOCAB, max_ctx: 64, dropout: 0.0 };
    let init = Parameters::<f64>::init(&cfg, 1).unwrap();
    let val = Validation { sequences: set.samples.clone(), context_len: 4, generate_tokens: 8 };
    let tc = TrainConfig { epochs: 400, lr: 1e-2, batch_size: 4, eval_every: 400, eval_contexts: Some(1), ..TrainConfig::desk() };
    let run = hyperfit(init, &set, &val, &tc).unwrap();
    (run.params, set)
}

#[test]
fn blocked_generations_respect_the_bound() {
    let (params, set) = memorized();
    let ctxs: Vec<Vec<TokenId>> = set.samples.iter().map(|s| s.tokens[..4].to_vec()).collect();
    let free: usize = ctxs
        .iter()
        .map(|c| brute_overlap(&generate(&params, c, &GenerationConfig::greedy(40)).unwrap().0.tokens, &set.samples))
        .max()
        .unwrap();
    assert!(free >= 20, "model should copy its set, longest overlap {free}");

    let bounds = boundaries();
    for n in [2, 3, 5] {
        let index = Arc::new(NGramIndex::build(&set, n).unwrap());
        for defer in [false, true] {
            let block = CitationBlockConfig::new(index.clone(), defer, Some(bounds.clone()));
            let cfg = GenerationConfig::greedy(40).with_block(block);
            for c in &ctxs {
                let (out, trace) = generate(&params, c, &cfg).unwrap();
                let overlap = brute_overlap(&out.tokens, &set.samples);
                let word = bounds.word_lengths(&out.tokens).into_iter().max().unwrap();
                let bound = if defer { n + word } else { n };
                assert!(overlap <= bound, "n={n} defer={defer}: overlap {overlap} > {bound}");
                assert!(trace.steps.iter().any(|s| s.block.is_some()));
            }
        }
    }
}

#[test]
fn blocking_without_matches_changes_nothing() {
    let (params, set) = memorized();
    let other = HyperfitSet::new(vec![TokenSequence::new(vec![0; 48], "z").unwrap()], 48, 0, OrderId::Base, VOCAB).unwrap();
    let index = Arc::new(NGramIndex::build(&other, 5).unwrap());
    let c = &set.samples[1].tokens[..4];
    let plain = generate(&params, c, &GenerationConfig::greedy(40)).unwrap().0;
    assert!(brute_overlap(&plain.tokens, &other.samples) < 5);
    let cfg = GenerationConfig::greedy(40).with_block(CitationBlockConfig::new(index, false, None));
    let (blocked, trace) = generate(&params, c, &cfg).unwrap();
    assert_eq!(blocked, plain);
    assert!(trace.steps.iter().all(|s| s.block.is_none()));
}
