use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, Scalar};
use crate::error::Result;

pub(crate) const PER_LAYER: usize = 12;

/// Offsets of the per-layer tensors relative to the layer base index.
pub(crate) mod slot {
    pub const LN1_G: usize = 0;
    pub const LN1_B: usize = 1;
    pub const ATTN_W: usize = 2;
    pub const ATTN_B: usize = 3;
    pub const PROJ_W: usize = 4;
    pub const PROJ_B: usize = 5;
    pub const LN2_G: usize = 6;
    pub const LN2_B: usize = 7;
    pub const FC_W: usize = 8;
    pub const FC_B: usize = 9;
    pub const OUT_W: usize = 10;
    pub const OUT_B: usize = 11;
}

pub(crate) const TOK_EMB: usize = 0;
pub(crate) const POS_EMB: usize = 1;

pub(crate) fn layer_base(layer: usize) -> usize {
    2 + PER_LAYER * layer
}

pub(crate) fn lnf_g(cfg: &ModelConfig) -> usize {
    layer_base(cfg.n_layers)
}

pub(crate) fn head_w(cfg: &ModelConfig) -> usize {
    layer_base(cfg.n_layers) + 2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorClass {
    Embedding,
    Attention,
    FeedForward,
    Norm,
    Head,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub class: TensorClass,
    pub data: Vec<T>,
}

/// Shapes and classes of all tensors, in declaration order.
pub fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, TensorClass)> {
    use TensorClass::*;
    let (d, f, v, c) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.max_ctx);
    let mut out = vec![
        ("tok_emb".to_string(), vec![v, d], Embedding),
        ("pos_emb".to_string(), vec![c, d], Embedding),
    ];
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("layer{l}.{s}");
        out.extend([
            (p("ln1.gain"), vec![d], Norm),
            (p("ln1.bias"), vec![d], Norm),
            (p("attn.w_qkv"), vec![d, 3 * d], Attention),
            (p("attn.b_qkv"), vec![3 * d], Attention),
            (p("attn.w_proj"), vec![d, d], Attention),
            (p("attn.b_proj"), vec![d], Attention),
            (p("ln2.gain"), vec![d], Norm),
            (p("ln2.bias"), vec![d], Norm),
            (p("ffn.w_in"), vec![d, f], FeedForward),
            (p("ffn.b_in"), vec![f], FeedForward),
            (p("ffn.w_out"), vec![f, d], FeedForward),
            (p("ffn.b_out"), vec![d], FeedForward),
        ]);
    }
    out.extend([
        ("ln_f.gain".to_string(), vec![d], Norm),
        ("ln_f.bias".to_string(), vec![d], Norm),
        ("head.w".to_string(), vec![d, v], Head),
    ]);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Parameters<T> {
    /// Normal(0, 0.02) weights, residual output projections scaled by
    /// `1/sqrt(2 * n_layers)`, zero biases, unit norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 0.02;
        let resid_std = std / (2.0 * config.n_layers as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let resid = Normal::new(0.0, resid_std).expect("valid std");
        let tensors = layout(config)
            .into_iter()
            .map(|(name, shape, class)| {
                let len: usize = shape.iter().product();
                let data = if name.ends_with(".gain") {
                    vec![T::one(); len]
                } else if name.contains(".b_") || name.ends_with(".bias") {
                    vec![T::zero(); len]
                } else if name.ends_with("w_proj") || name.ends_with("w_out") {
                    (0..len).map(|_| T::of(resid.sample(&mut rng))).collect()
                } else {
                    (0..len).map(|_| T::of(normal.sample(&mut rng))).collect()
                };
                Tensor { name, shape, class, data }
            })
            .collect();
        Ok(Self { config: config.clone(), tensors })
    }

    pub fn n_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    pub(crate) fn w(&self, idx: usize) -> &[T] {
        &self.tensors[idx].data
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    class: t.class,
                    data: t.data.iter().map(|x| U::of(x.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Gradient buffers with the same layout as `Parameters`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &Parameters<T>) -> Self {
        Self { tensors: params.tensors.iter().map(|t| vec![T::zero(); t.data.len()]).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::toy(32);
        let a = Parameters::<f32>::init(&cfg, 5).unwrap();
        let b = Parameters::<f32>::init(&cfg, 5).unwrap();
        let c = Parameters::<f32>::init(&cfg, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.n_elements(), cfg.parameter_count());
        assert!(a.is_finite());
    }

    #[test]
    fn invalid_config_fails_init() {
        let mut cfg = ModelConfig::toy(32);
        cfg.n_heads = 7;
        assert!(Parameters::<f64>::init(&cfg, 0).is_err());
    }

    #[test]
    fn layout_indices_agree() {
        let cfg = ModelConfig::toy(32);
        let l = layout(&cfg);
        assert_eq!(l[layer_base(1) + slot::FC_W].0, "layer1.ffn.w_in");
        assert_eq!(l[lnf_g(&cfg)].0, "ln_f.gain");
        assert_eq!(l[head_w(&cfg)].0, "head.w");
        assert_eq!(l.len(), head_w(&cfg) + 1);
    }
}
