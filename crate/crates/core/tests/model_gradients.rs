//! Finite-difference check of the analytic backward pass.

use hyperfit::model::{backward, forward, nll_loss, ModelConfig, Parameters, TensorClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss_at(p: &Parameters<f64>, x: &[u32], y: &[u32]) -> f64 {
    nll_loss(&forward(p, x).unwrap(), y).unwrap()
}

/// Largest relative error over `per_class` random coordinates of each class.
fn worst_relative_error(cfg: &ModelConfig, seq_len: usize, per_class: usize, seed: u64) -> Vec<(TensorClass, f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Parameters::<f64>::init(cfg, seed).unwrap();
    // Perturb gains/biases away from their init so every path carries gradient.
    for t in p.tensors.iter_mut() {
        for w in t.data.iter_mut() {
            *w += rng.random_range(-0.05..0.05);
        }
    }
    let seq: Vec<u32> = (0..=seq_len).map(|_| rng.random_range(0..cfg.vocab_size as u32)).collect();
    let (x, y) = (&seq[..seq_len], &seq[1..]);
    let (_, grads) = backward(&p, x, y).unwrap();
    let h = 1e-4;
    let classes = [TensorClass::Embedding, TensorClass::Attention, TensorClass::FeedForward, TensorClass::Norm, TensorClass::Head];
    let mut out = Vec::new();
    for class in classes {
        let idx: Vec<usize> = (0..p.tensors.len()).filter(|&i| p.tensors[i].class == class).collect();
        let mut worst: f64 = 0.0;
        for _ in 0..per_class {
            let ti = idx[rng.random_range(0..idx.len())];
            let ci = rng.random_range(0..p.tensors[ti].data.len());
            let orig = p.tensors[ti].data[ci];
            p.tensors[ti].data[ci] = orig + h;
            let up = loss_at(&p, x, y);
            p.tensors[ti].data[ci] = orig - h;
            let down = loss_at(&p, x, y);
            p.tensors[ti].data[ci] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.tensors[ti][ci];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
        out.push((class, worst, per_class));
    }
    out
}

#[test]
fn analytic_gradients_match_central_differences() {
    let cfg = ModelConfig { n_layers: 2, n_heads: 4, d_model: 32, d_ff: 64, vocab_size: 20, max_ctx: 32, dropout: 0.0 };
    for (class, err, n) in worst_relative_error(&cfg, 12, 200, 17) {
        println!("{class:?}: worst relative error {err:.3e} over {n} coordinates");
        assert!(err < 1e-4, "{class:?} {err}");
    }
}
