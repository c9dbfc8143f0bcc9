//! Incremental decoding with a key/value cache. Produces the same logits as
//! `forward` on the full prefix, one position at a time.

use super::params::{head_w, layer_base, lnf_g, slot, POS_EMB, TOK_EMB};
use super::transformer::{gelu, LN_EPS};
use super::{Parameters, Scalar};
use crate::corpus::TokenId;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct DecodeState<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

fn norm_row<T: Scalar>(x: &[T], gain: &[T], bias: &[T]) -> Vec<T> {
    let d = x.len();
    let inv_d = T::of(1.0 / d as f64);
    let mean = x.iter().copied().sum::<T>() * inv_d;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
    let r = T::one() / (var + T::of(LN_EPS)).sqrt();
    x.iter().zip(gain.iter().zip(bias)).map(|(&v, (&g, &b))| (v - mean) * r * g + b).collect()
}

/// `x[rows] W[rows×cols] + bias`.
fn vec_mat<T: Scalar>(x: &[T], w: &[T], bias: &[T], cols: usize) -> Vec<T> {
    let mut out = bias.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
    out
}

impl<T: Scalar> DecodeState<T> {
    pub fn new(params: &Parameters<T>) -> Self {
        let l = params.config.n_layers;
        Self { keys: vec![Vec::new(); l], values: vec![Vec::new(); l], len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feeds tokens in order and returns the logits after the last one.
    pub fn prefill(&mut self, params: &Parameters<T>, tokens: &[TokenId]) -> Result<Vec<T>> {
        if tokens.is_empty() {
            return Err(Error::Empty("prefill tokens"));
        }
        let mut last = Vec::new();
        for &t in tokens {
            last = self.step(params, t)?;
        }
        Ok(last)
    }

    /// Appends one token and returns the next-token logits.
    pub fn step(&mut self, params: &Parameters<T>, token: TokenId) -> Result<Vec<T>> {
        let cfg = &params.config;
        if self.len >= cfg.max_ctx {
            return Err(Error::ContextLength { len: self.len + 1, max_ctx: cfg.max_ctx });
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::TokenOutOfRange { id: token, vocab_size: cfg.vocab_size });
        }
        let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let (heads, hd) = (cfg.n_heads, cfg.head_dim());
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let pos = self.len;

        let (tok, pe) = (params.w(TOK_EMB), params.w(POS_EMB));
        let t = token as usize;
        let mut h: Vec<T> = (0..d).map(|j| tok[t * d + j] + pe[pos * d + j]).collect();

        for l in 0..cfg.n_layers {
            let b = layer_base(l);
            let a = norm_row(&h, params.w(b + slot::LN1_G), params.w(b + slot::LN1_B));
            let qkv = vec_mat(&a, params.w(b + slot::ATTN_W), params.w(b + slot::ATTN_B), 3 * d);
            self.keys[l].extend_from_slice(&qkv[d..2 * d]);
            self.values[l].extend_from_slice(&qkv[2 * d..]);
            let (keys, values) = (&self.keys[l], &self.values[l]);
            let n = pos + 1;

            let mut att = vec![T::zero(); d];
            let mut scores = vec![T::zero(); n];
            for hh in 0..heads {
                let q = &qkv[hh * hd..(hh + 1) * hd];
                for (j, s) in scores.iter_mut().enumerate() {
                    let k = &keys[j * d + hh * hd..j * d + (hh + 1) * hd];
                    *s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
                }
                let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let out = &mut att[hh * hd..(hh + 1) * hd];
                for (j, &s) in scores.iter().enumerate() {
                    let p = s / sum;
                    let vrow = &values[j * d + hh * hd..j * d + (hh + 1) * hd];
                    for (o, &vv) in out.iter_mut().zip(vrow) {
                        *o += p * vv;
                    }
                }
            }
            let y = vec_mat(&att, params.w(b + slot::PROJ_W), params.w(b + slot::PROJ_B), d);
            for (x, y) in h.iter_mut().zip(&y) {
                *x += *y;
            }
            let c = norm_row(&h, params.w(b + slot::LN2_G), params.w(b + slot::LN2_B));
            let act: Vec<T> = vec_mat(&c, params.w(b + slot::FC_W), params.w(b + slot::FC_B), f)
                .into_iter()
                .map(gelu)
                .collect();
            let z = vec_mat(&act, params.w(b + slot::OUT_W), params.w(b + slot::OUT_B), d);
            for (x, z) in h.iter_mut().zip(&z) {
                *x += *z;
            }
        }
        let g = lnf_g(cfg);
        let hf = norm_row(&h, params.w(g), params.w(g + 1));
        let zeros = vec![T::zero(); v];
        self.len += 1;
        Ok(vec_mat(&hf, params.w(head_w(cfg)), &zeros, v))
    }
}
