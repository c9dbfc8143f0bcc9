use super::*;
use crate::corpus::{write_set, OrderId, SetProvenance, TokenizerMode};
use crate::model::{Checkpoint, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg() -> ModelConfig {
    ModelConfig { n_layers: 1, n_heads: 2, d_model: 16, d_ff: 32, vocab_size: 10, max_ctx: 104, dropout: 0.0 }
}

fn seqs(n: usize, len: usize, seed: u64) -> Vec<TokenSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| TokenSequence::new((0..len).map(|_| rng.random_range(0..10)).collect(), "t").unwrap()).collect()
}

fn set(n: usize) -> HyperfitSet {
    HyperfitSet::new(seqs(n, 20, 3), 20, 3, OrderId::Base, 10).unwrap()
}

fn val() -> Validation {
    let mut v = Validation::new(seqs(4, 20, 9)).unwrap();
    v.context_len = 8;
    v.generate_tokens = 16;
    v
}

fn quick() -> TrainConfig {
    TrainConfig { epochs: 30, lr: 1e-2, batch_size: 2, eval_every: 10, ..TrainConfig::desk() }
}

#[test]
fn determinacy_matrix_shape() {
    let base = Parameters::<f32>::init(&cfg(), 0).unwrap();
    let sets = order_variants(&set(6), 1).unwrap();
    let held = seqs(4, 20, 11);
    let (out, models) = determinacy(&base, &sets, &held, &val(), &quick()).unwrap();
    assert_eq!(models.len(), 3);
    let m = &out.matrix;
    assert_eq!(m.labels, ["base", "shuffle-1", "shuffle-all"]);
    assert!(m.is_symmetric() && m.has_unit_diagonal());
    assert!(m.off_diagonal().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn determinacy_rejects_different_samples() {
    let base = Parameters::<f32>::init(&cfg(), 0).unwrap();
    let a = set(4);
    let b = HyperfitSet::new(seqs(4, 20, 4), 20, 3, OrderId::ShuffleAll, 10).unwrap();
    assert!(determinacy(&base, &[a, b], &seqs(2, 20, 1), &val(), &quick()).is_err());
}

#[test]
fn overlap_study_respects_blocker_bound() {
    let base = Parameters::<f32>::init(&cfg(), 0).unwrap();
    let hf = hyperfit(base.clone(), &set(4), &val(), &TrainConfig { epochs: 200, eval_every: 200, ..quick() }).unwrap().params;
    let s = set(4);
    // contexts taken from the set itself invite verbatim continuation
    let ctxs: Vec<Vec<u32>> = s.samples.iter().map(|x| x.tokens[..8].to_vec()).collect();
    let block = BlockSpec { n: 3, defer_to_word_end: false };
    let variants = [
        Variant { label: "base".into(), params: &base, block: None },
        Variant { label: "hyperfit".into(), params: &hf, block: None },
        Variant { label: "blocked".into(), params: &hf, block: Some(block) },
    ];
    let out = overlap_study(&variants, &s, &ctxs, &GenerationConfig::greedy(24), None).unwrap();
    assert_eq!(out.len(), 3);
    for v in &out {
        assert_eq!(v.histogram.iter().map(|h| h.1).sum::<usize>(), ctxs.len());
    }
    assert!(out[1].max_overlap > 3, "hyperfit max overlap {}", out[1].max_overlap);
    assert_eq!(out[2].bound, Some(3));
    assert_eq!(out[2].bound_holds, Some(true));
    assert!(out[2].max_overlap <= 3);
    assert!(overlap_study(&variants[..1], &s, &ctxs, &GenerationConfig::greedy(8), None).is_err());
    let deferred = [
        Variant { label: "a".into(), params: &hf, block: None },
        Variant { label: "b".into(), params: &hf, block: Some(BlockSpec::default()) },
    ];
    assert!(overlap_study(&deferred, &s, &ctxs, &GenerationConfig::greedy(8), None).is_err());
}

#[test]
fn sharpness_of_identical_models_is_identical() {
    let p = Parameters::<f64>::init(&cfg(), 5).unwrap();
    let rows = sharpness_study(&[("a", &p), ("b", &p)], &seqs(3, 20, 2)).unwrap();
    assert_eq!(rows[0].perplexity, rows[1].perplexity);
    assert_eq!(rows[0].at5, rows[1].at5);
    assert!(rows[0].at1 <= rows[0].at3 && rows[0].at3 <= rows[0].at5);
}

#[test]
fn decay_has_one_point_per_position() {
    let p = Parameters::<f32>::init(&cfg(), 5).unwrap();
    let ctxs = contexts(&seqs(3, 20, 2), 8, 3).unwrap();
    let mut gen = GenerationConfig::greedy(40);
    gen.max_new_tokens = 40;
    let w = TTR_WINDOW;
    // the window is wider than these generations, so this protocol refuses
    assert!(decay_study(&[("m", &p)], &ctxs, &gen).is_err());
    let _ = w;
}

#[test]
fn quantity_sweep_counts() {
    let base = Parameters::<f32>::init(&cfg(), 0).unwrap();
    let mut big = cfg();
    big.max_ctx = 8 + TTR_WINDOW;
    let base_big = Parameters::<f32>::init(&big, 0).unwrap();
    let ctxs = contexts(&seqs(2, 20, 2), 8, 2).unwrap();
    let pts = quantity_sweep(&base_big, &set(4), &[1, 4], 3, &ctxs, &val(), &quick()).unwrap();
    assert_eq!(pts.iter().map(|p| p.n_samples).collect::<Vec<_>>(), [1, 4]);
    assert!(!pts[0].warnings.is_empty() && pts[1].warnings.is_empty());
    let again = quantity_sweep(&base_big, &set(4), &[1, 4], 3, &ctxs, &val(), &quick()).unwrap();
    assert_eq!(pts, again);
    assert!(quantity_sweep(&base, &set(4), &[], 3, &ctxs, &val(), &quick()).is_err());
}

fn write_fixture(dir: &std::path::Path) {
    let p = Parameters::<f32>::init(&cfg(), 5).unwrap();
    Checkpoint::new(p, 0, vec![5]).save(&dir.join("base.ckpt")).unwrap();
    let held = HyperfitSet::new(seqs(4, 20, 8), 20, 8, OrderId::Base, 10).unwrap();
    write_set(&dir.join("held.hfs"), &held, &SetProvenance::describe(&held, vec![], TokenizerMode::Byte)).unwrap();
    let s = set(4);
    write_set(&dir.join("set.hfs"), &s, &SetProvenance::describe(&s, vec![], TokenizerMode::Byte)).unwrap();
}

fn spec_json(kind: &str) -> String {
    format!(
        r#"{{"kind": "{kind}", "checkpoint": "base.ckpt", "set": "set.hfs", "held_out": "held.hfs",
            "models": [{{"label": "a", "checkpoint": "base.ckpt"}}, {{"label": "b", "checkpoint": "base.ckpt"}}],
            "contexts": 3, "context_len": 8,
            "train": {{"epochs": 4, "lr": 0.01, "batch_size": 2, "eval_every": 2}},
            "generation": {{"max_new_tokens": 12}}}}"#
    )
}

#[test]
fn file_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let spec_path = dir.path().join("spec.json");
    for kind in ["curve", "sharpness", "overlap"] {
        std::fs::write(&spec_path, spec_json(kind)).unwrap();
        let a = run(&spec_path, Some(&dir.path().join(format!("{kind}-a")))).unwrap();
        let b = run(&spec_path, Some(&dir.path().join(format!("{kind}-b")))).unwrap();
        assert_eq!(a, b);
        let ja = std::fs::read(dir.path().join(format!("{kind}-a")).join(REPORT_FILE)).unwrap();
        let jb = std::fs::read(dir.path().join(format!("{kind}-b")).join(REPORT_FILE)).unwrap();
        assert_eq!(ja, jb);
        let back: RunReport = serde_json::from_slice(&ja).unwrap();
        assert_eq!(back, a);
        assert!(dir.path().join(format!("{kind}-a")).join(TIMING_FILE).exists());
    }
    // outputs must go to a fresh directory
    assert!(run(&spec_path, Some(&dir.path().join("overlap-a"))).is_err());
}

#[test]
fn missing_artifacts_fail_before_running() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let spec = ExperimentSpec::from_json(&spec_json("curve").replace("base.ckpt", "nope.ckpt")).unwrap();
    let err = run_in(&spec, dir.path(), &dir.path().join("out")).unwrap_err();
    assert!(matches!(err, Error::Missing(_)), "{err}");
    assert!(!dir.path().join("out").exists());
    let mut spec = ExperimentSpec::from_json(&spec_json("curve")).unwrap();
    spec.checkpoint = None;
    assert!(matches!(run_in(&spec, dir.path(), &dir.path().join("out")), Err(Error::Config(_))));
}

#[test]
fn spec_round_trip_and_hash() {
    let spec = ExperimentSpec::from_json(&spec_json("determinacy")).unwrap();
    let back: ExperimentSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
    assert_eq!(back, spec);
    assert_eq!(back.hash(), spec.hash());
    let mut other = spec.clone();
    other.seed = 1;
    assert_ne!(other.hash(), spec.hash());
    assert_eq!(spec.counts, [8, 16]);
    assert_eq!(spec.total_updates, 5000);
}
