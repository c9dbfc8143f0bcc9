//! Pre-norm causal transformer: forward pass with activation cache and the
//! matching exact backward pass.

use super::params::{head_w, layer_base, lnf_g, slot, POS_EMB, TOK_EMB};
use super::scalar::{gemm, View};
use super::{Gradients, LogitsMatrix, Parameters, Scalar};
use crate::corpus::TokenId;
use crate::error::{Error, Result};

pub(crate) const LN_EPS: f64 = 1e-5;

struct NormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct LayerCache<T> {
    ln1: NormCache<T>,
    a: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    att: Vec<T>,
    ln2: NormCache<T>,
    c: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

pub(crate) struct Cache<T> {
    layers: Vec<LayerCache<T>>,
    lnf: NormCache<T>,
    hf: Vec<T>,
}

fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], d: usize) -> (Vec<T>, NormCache<T>) {
    let n = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); n];
    let inv_d = T::of(1.0 / d as f64);
    let eps = T::of(LN_EPS);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let r = T::one() / (var + eps).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = h * gain[j] + bias[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

/// Returns dx and accumulates gain/bias gradients.
fn layer_norm_back<T: Scalar>(
    dy: &[T],
    cache: &NormCache<T>,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
    d: usize,
) -> Vec<T> {
    let n = dy.len() / d;
    let mut dx = vec![T::zero(); dy.len()];
    let inv_d = T::of(1.0 / d as f64);
    let mut dxhat = vec![T::zero(); d];
    for i in 0..n {
        let (dyr, xh) = (&dy[i * d..(i + 1) * d], &cache.xhat[i * d..(i + 1) * d]);
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let r = cache.rstd[i];
        for j in 0..d {
            dx[i * d + j] = r * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}

/// `out[n×cols] = x[n×rows] W[rows×cols] + bias`.
pub(crate) fn affine<T: Scalar>(x: &[T], w: &[T], bias: &[T], rows: usize, cols: usize) -> Vec<T> {
    let n = x.len() / rows;
    let mut out = Vec::with_capacity(n * cols);
    for _ in 0..n {
        out.extend_from_slice(bias);
    }
    gemm(n, rows, cols, T::one(), View::rows(x, rows), View::rows(w, cols), T::one(), &mut out, cols, 1);
    out
}

/// Backward of `affine`: accumulates dW, db and returns dx.
fn affine_back<T: Scalar>(
    dout: &[T],
    x: &[T],
    w: &[T],
    dw: &mut [T],
    db: &mut [T],
    rows: usize,
    cols: usize,
) -> Vec<T> {
    let n = dout.len() / cols;
    gemm(rows, n, cols, T::one(), View::trans(x, rows), View::rows(dout, cols), T::one(), dw, cols, 1);
    for i in 0..n {
        for (b, &g) in db.iter_mut().zip(&dout[i * cols..(i + 1) * cols]) {
            *b += g;
        }
    }
    let mut dx = vec![T::zero(); n * rows];
    gemm(n, cols, rows, T::one(), View::rows(dout, cols), View::trans(w, cols), T::zero(), &mut dx, rows, 1);
    dx
}

pub(crate) fn check_input<T: Scalar>(params: &Parameters<T>, input: &[TokenId]) -> Result<()> {
    let cfg = &params.config;
    if input.is_empty() {
        return Err(Error::Empty("model input"));
    }
    if input.len() > cfg.max_ctx {
        return Err(Error::ContextLength { len: input.len(), max_ctx: cfg.max_ctx });
    }
    if let Some(&id) = input.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange { id, vocab_size: cfg.vocab_size });
    }
    Ok(())
}

pub(crate) fn forward_cached<T: Scalar>(
    params: &Parameters<T>,
    input: &[TokenId],
) -> Result<(LogitsMatrix<T>, Cache<T>)> {
    check_input(params, input)?;
    let cfg = &params.config;
    let (n, d, f, v) = (input.len(), cfg.d_model, cfg.d_ff, cfg.vocab_size);
    let (heads, hd) = (cfg.n_heads, cfg.head_dim());
    let scale = T::of(1.0 / (hd as f64).sqrt());

    let tok = params.w(TOK_EMB);
    let pos = params.w(POS_EMB);
    let mut h = vec![T::zero(); n * d];
    for (t, &id) in input.iter().enumerate() {
        let id = id as usize;
        for j in 0..d {
            h[t * d + j] = tok[id * d + j] + pos[t * d + j];
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let b = layer_base(l);
        let (a, ln1) = layer_norm(&h, params.w(b + slot::LN1_G), params.w(b + slot::LN1_B), d);
        let qkv = affine(&a, params.w(b + slot::ATTN_W), params.w(b + slot::ATTN_B), d, 3 * d);

        let mut probs = vec![T::zero(); heads * n * n];
        let mut att = vec![T::zero(); n * d];
        for hh in 0..heads {
            let p = &mut probs[hh * n * n..(hh + 1) * n * n];
            let q = View::strided(&qkv[hh * hd..], 3 * d, 1);
            let kt = View::strided(&qkv[d + hh * hd..], 1, 3 * d);
            gemm(n, hd, n, scale, q, kt, T::zero(), p, n, 1);
            for i in 0..n {
                let row = &mut p[i * n..(i + 1) * n];
                let max = row[..=i].iter().copied().fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for x in row[..=i].iter_mut() {
                    *x = (*x - max).exp();
                    sum += *x;
                }
                let inv = T::one() / sum;
                for x in row[..=i].iter_mut() {
                    *x *= inv;
                }
                for x in row[i + 1..].iter_mut() {
                    *x = T::zero();
                }
            }
            let vv = View::strided(&qkv[2 * d + hh * hd..], 3 * d, 1);
            gemm(n, n, hd, T::one(), View::rows(p, n), vv, T::zero(), &mut att[hh * hd..], d, 1);
        }
        let y = affine(&att, params.w(b + slot::PROJ_W), params.w(b + slot::PROJ_B), d, d);
        for (hv, yv) in h.iter_mut().zip(&y) {
            *hv += *yv;
        }

        let (c, ln2) = layer_norm(&h, params.w(b + slot::LN2_G), params.w(b + slot::LN2_B), d);
        let pre = affine(&c, params.w(b + slot::FC_W), params.w(b + slot::FC_B), d, f);
        let act: Vec<T> = pre.iter().map(|&x| gelu(x)).collect();
        let z = affine(&act, params.w(b + slot::OUT_W), params.w(b + slot::OUT_B), f, d);
        for (hv, zv) in h.iter_mut().zip(&z) {
            *hv += *zv;
        }
        layers.push(LayerCache { ln1, a, qkv, probs, att, ln2, c, pre, act });
    }

    let g = lnf_g(cfg);
    let (hf, lnf) = layer_norm(&h, params.w(g), params.w(g + 1), d);
    let mut logits = vec![T::zero(); n * v];
    gemm(n, d, v, T::one(), View::rows(&hf, d), View::rows(params.w(head_w(cfg)), v), T::zero(), &mut logits, v, 1);
    Ok((LogitsMatrix { rows: n, vocab: v, data: logits }, Cache { layers, lnf, hf }))
}

/// Backpropagates `dlogits` through a cached forward pass, accumulating
/// into `grads`.
pub(crate) fn backward_cached<T: Scalar>(
    params: &Parameters<T>,
    input: &[TokenId],
    cache: &Cache<T>,
    dlogits: &[T],
    grads: &mut Gradients<T>,
) {
    let cfg = &params.config;
    let (n, d, f, v) = (input.len(), cfg.d_model, cfg.d_ff, cfg.vocab_size);
    let (heads, hd) = (cfg.n_heads, cfg.head_dim());
    let scale = T::of(1.0 / (hd as f64).sqrt());

    let hw = head_w(cfg);
    gemm(d, n, v, T::one(), View::trans(&cache.hf, d), View::rows(dlogits, v), T::one(), &mut grads.tensors[hw], v, 1);
    let mut dhf = vec![T::zero(); n * d];
    gemm(n, v, d, T::one(), View::rows(dlogits, v), View::trans(params.w(hw), v), T::zero(), &mut dhf, d, 1);

    let g = lnf_g(cfg);
    let (dg, db) = pair_mut(&mut grads.tensors, g, g + 1);
    let mut dh = layer_norm_back(&dhf, &cache.lnf, params.w(g), dg, db, d);

    for l in (0..cfg.n_layers).rev() {
        let b = layer_base(l);
        let lc = &cache.layers[l];

        // feed-forward block
        let (dw, dbv) = pair_mut(&mut grads.tensors, b + slot::OUT_W, b + slot::OUT_B);
        let mut dact = affine_back(&dh, &lc.act, params.w(b + slot::OUT_W), dw, dbv, f, d);
        for (da, &x) in dact.iter_mut().zip(&lc.pre) {
            *da *= gelu_grad(x);
        }
        let (dw, dbv) = pair_mut(&mut grads.tensors, b + slot::FC_W, b + slot::FC_B);
        let dc = affine_back(&dact, &lc.c, params.w(b + slot::FC_W), dw, dbv, d, f);
        let (dg, dbn) = pair_mut(&mut grads.tensors, b + slot::LN2_G, b + slot::LN2_B);
        let dmid = layer_norm_back(&dc, &lc.ln2, params.w(b + slot::LN2_G), dg, dbn, d);
        for (x, y) in dh.iter_mut().zip(&dmid) {
            *x += *y;
        }

        // attention block
        let (dw, dbv) = pair_mut(&mut grads.tensors, b + slot::PROJ_W, b + slot::PROJ_B);
        let datt = affine_back(&dh, &lc.att, params.w(b + slot::PROJ_W), dw, dbv, d, d);
        let mut dqkv = vec![T::zero(); n * 3 * d];
        let mut dp = vec![T::zero(); n * n];
        for hh in 0..heads {
            let p = &lc.probs[hh * n * n..(hh + 1) * n * n];
            let dout = View::strided(&datt[hh * hd..], d, 1);
            let vt = View::strided(&lc.qkv[2 * d + hh * hd..], 1, 3 * d);
            gemm(n, hd, n, T::one(), dout, vt, T::zero(), &mut dp, n, 1);
            gemm(n, n, hd, T::one(), View::trans(p, n), dout, T::zero(), &mut dqkv[2 * d + hh * hd..], 3 * d, 1);
            for i in 0..n {
                let (pr, dr) = (&p[i * n..(i + 1) * n], &mut dp[i * n..(i + 1) * n]);
                let dot = pr[..=i].iter().zip(&dr[..=i]).map(|(&a, &b)| a * b).sum::<T>();
                for j in 0..=i {
                    dr[j] = pr[j] * (dr[j] - dot);
                }
                for x in dr[i + 1..].iter_mut() {
                    *x = T::zero();
                }
            }
            let k = View::strided(&lc.qkv[d + hh * hd..], 3 * d, 1);
            gemm(n, n, hd, scale, View::rows(&dp, n), k, T::zero(), &mut dqkv[hh * hd..], 3 * d, 1);
            let q = View::strided(&lc.qkv[hh * hd..], 3 * d, 1);
            gemm(n, n, hd, scale, View::trans(&dp, n), q, T::zero(), &mut dqkv[d + hh * hd..], 3 * d, 1);
        }
        let (dw, dbv) = pair_mut(&mut grads.tensors, b + slot::ATTN_W, b + slot::ATTN_B);
        let da = affine_back(&dqkv, &lc.a, params.w(b + slot::ATTN_W), dw, dbv, d, 3 * d);
        let (dg, dbn) = pair_mut(&mut grads.tensors, b + slot::LN1_G, b + slot::LN1_B);
        let din = layer_norm_back(&da, &lc.ln1, params.w(b + slot::LN1_G), dg, dbn, d);
        for (x, y) in dh.iter_mut().zip(&din) {
            *x += *y;
        }
    }

    let (dtok, dpos) = pair_mut(&mut grads.tensors, TOK_EMB, POS_EMB);
    for (t, &id) in input.iter().enumerate() {
        let id = id as usize;
        for j in 0..d {
            dtok[id * d + j] += dh[t * d + j];
            dpos[t * d + j] += dh[t * d + j];
        }
    }
}

fn pair_mut<T>(v: &mut [Vec<T>], i: usize, j: usize) -> (&mut [T], &mut [T]) {
    assert!(i < j);
    let (lo, hi) = v.split_at_mut(j);
    (&mut lo[i], &mut hi[0])
}
