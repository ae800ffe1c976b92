//! Transformer building blocks with hand-written backward passes. Each
//! forward returns the activations the matching backward needs; backward
//! functions accumulate into a gradient container of the same shape as the
//! parameters and return the gradient w.r.t. their input.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::math::{gelu, gelu_prime, softmax_backward_rows, softmax_rows, Mat};

/// Rounds through f32 so freshly initialized parameters already live on
/// the checkpoint grid.
pub(crate) fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

fn init_data(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| quantize(rng.random_range(-bound..bound))).collect()
}

/// y = x·Wᵀ + b with W: out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(out: usize, inp: usize) -> Linear {
        Linear { w: Mat::zeros(out, inp), b: vec![0.0; out] }
    }

    pub fn init(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Linear {
        let bound = 1.0 / (inp as f64).sqrt();
        Linear { w: Mat { rows: out, cols: inp, data: init_data(rng, out * inp, bound) }, b: vec![0.0; out] }
    }
}

pub fn linear_forward(p: &Linear, x: &Mat) -> Mat {
    let mut y = Mat::matmul_bt(x, &p.w);
    for r in 0..y.rows {
        for (v, b) in y.row_mut(r).iter_mut().zip(&p.b) {
            *v += b;
        }
    }
    y
}

/// Accumulates dW and db, returns dx.
pub fn linear_backward(p: &Linear, g: &mut Linear, x: &Mat, dy: &Mat) -> Mat {
    g.w.add_assign(&Mat::matmul_at(dy, x));
    for r in 0..dy.rows {
        for (gb, &d) in g.b.iter_mut().zip(dy.row(r)) {
            *gb += d;
        }
    }
    Mat::matmul(dy, &p.w)
}

const LN_EPS: f64 = 1e-5;

/// Per-position layer normalization with gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> LayerNorm {
        LayerNorm { gain: vec![1.0; dim], bias: vec![0.0; dim] }
    }

    pub fn zeros(dim: usize) -> LayerNorm {
        LayerNorm { gain: vec![0.0; dim], bias: vec![0.0; dim] }
    }
}

pub struct LnCache {
    pub xhat: Mat,
    pub inv_std: Vec<f64>,
}

pub fn layernorm_forward(p: &LayerNorm, x: &Mat) -> (Mat, LnCache) {
    let d = x.cols as f64;
    let mut out = Mat::zeros(x.rows, x.cols);
    let mut xhat = Mat::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(istd);
        for (c, &v) in row.iter().enumerate() {
            let h = (v - mean) * istd;
            *xhat.at_mut(r, c) = h;
            *out.at_mut(r, c) = p.gain[c] * h + p.bias[c];
        }
    }
    (out, LnCache { xhat, inv_std })
}

pub fn layernorm_backward(p: &LayerNorm, g: &mut LayerNorm, cache: &LnCache, dy: &Mat) -> Mat {
    let d = dy.cols as f64;
    let mut dx = Mat::zeros(dy.rows, dy.cols);
    for r in 0..dy.rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        for c in 0..dy.cols {
            g.gain[c] += dyr[c] * xh[c];
            g.bias[c] += dyr[c];
        }
        // dxhat = dy ⊙ gain; dx = istd (dxhat − mean(dxhat) − xhat·mean(dxhat⊙xhat))
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for c in 0..dy.cols {
            let dxh = dyr[c] * p.gain[c];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[c];
        }
        mean_dxh /= d;
        mean_dxh_xh /= d;
        let istd = cache.inv_std[r];
        for c in 0..dy.cols {
            let dxh = dyr[c] * p.gain[c];
            *dx.at_mut(r, c) = istd * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
        }
    }
    dx
}

/// Multi-head attention projections.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl Attention {
    pub fn zeros(d: usize) -> Attention {
        Attention {
            wq: Linear::zeros(d, d),
            wk: Linear::zeros(d, d),
            wv: Linear::zeros(d, d),
            wo: Linear::zeros(d, d),
        }
    }

    pub fn init(d: usize, rng: &mut ChaCha8Rng) -> Attention {
        Attention {
            wq: Linear::init(d, d, rng),
            wk: Linear::init(d, d, rng),
            wv: Linear::init(d, d, rng),
            wo: Linear::init(d, d, rng),
        }
    }
}

pub struct AttnCache {
    x_q: Mat,
    x_kv: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// Post-softmax attention per head (rows = query positions).
    attn: Vec<Mat>,
    concat: Mat,
}

fn head_slice(m: &Mat, head: usize, d_k: usize) -> Mat {
    let mut out = Mat::zeros(m.rows, d_k);
    for r in 0..m.rows {
        out.row_mut(r).copy_from_slice(&m.row(r)[head * d_k..(head + 1) * d_k]);
    }
    out
}

fn head_scatter(dst: &mut Mat, src: &Mat, head: usize, d_k: usize) {
    for r in 0..src.rows {
        dst.row_mut(r)[head * d_k..(head + 1) * d_k].copy_from_slice(src.row(r));
    }
}

/// Scaled dot-product attention. `x_q` supplies the queries, `x_kv` the
/// keys and values (pass the same matrix for self-attention).
pub fn attention_forward(
    p: &Attention,
    x_q: &Mat,
    x_kv: &Mat,
    n_heads: usize,
    causal: bool,
) -> (Mat, AttnCache) {
    let d = x_q.cols;
    let d_k = d / n_heads;
    let scale = 1.0 / (d_k as f64).sqrt();

    let q = linear_forward(&p.wq, x_q);
    let k = linear_forward(&p.wk, x_kv);
    let v = linear_forward(&p.wv, x_kv);

    let mut concat = Mat::zeros(x_q.rows, d);
    let mut attn = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = head_slice(&q, h, d_k);
        let kh = head_slice(&k, h, d_k);
        let vh = head_slice(&v, h, d_k);
        let mut scores = Mat::matmul_bt(&qh, &kh);
        for val in scores.data.iter_mut() {
            *val *= scale;
        }
        if causal {
            for i in 0..scores.rows {
                for j in (i + 1)..scores.cols {
                    *scores.at_mut(i, j) = f64::NEG_INFINITY;
                }
            }
        }
        softmax_rows(&mut scores);
        let out_h = Mat::matmul(&scores, &vh);
        head_scatter(&mut concat, &out_h, h, d_k);
        attn.push(scores);
    }
    let out = linear_forward(&p.wo, &concat);
    let cache = AttnCache { x_q: x_q.clone(), x_kv: x_kv.clone(), q, k, v, attn, concat };
    (out, cache)
}

/// Returns (dx_q, dx_kv); the caller adds them together for self-attention.
pub fn attention_backward(
    p: &Attention,
    g: &mut Attention,
    cache: &AttnCache,
    d_out: &Mat,
    n_heads: usize,
) -> (Mat, Mat) {
    let d = cache.x_q.cols;
    let d_k = d / n_heads;
    let scale = 1.0 / (d_k as f64).sqrt();

    let d_concat = linear_backward(&p.wo, &mut g.wo, &cache.concat, d_out);

    let mut dq = Mat::zeros(cache.q.rows, d);
    let mut dk = Mat::zeros(cache.k.rows, d);
    let mut dv = Mat::zeros(cache.v.rows, d);
    for h in 0..n_heads {
        let d_out_h = head_slice(&d_concat, h, d_k);
        let vh = head_slice(&cache.v, h, d_k);
        let qh = head_slice(&cache.q, h, d_k);
        let kh = head_slice(&cache.k, h, d_k);
        let probs = &cache.attn[h];

        let d_probs = Mat::matmul_bt(&d_out_h, &vh);
        let dvh = Mat::matmul_at(probs, &d_out_h);
        let mut d_scores = softmax_backward_rows(probs, &d_probs);
        for val in d_scores.data.iter_mut() {
            *val *= scale;
        }
        let dqh = Mat::matmul(&d_scores, &kh);
        let dkh = Mat::matmul_at(&d_scores, &qh);

        head_scatter(&mut dq, &dqh, h, d_k);
        head_scatter(&mut dk, &dkh, h, d_k);
        head_scatter(&mut dv, &dvh, h, d_k);
    }

    let dx_q = linear_backward(&p.wq, &mut g.wq, &cache.x_q, &dq);
    let mut dx_kv = linear_backward(&p.wk, &mut g.wk, &cache.x_kv, &dk);
    dx_kv.add_assign(&linear_backward(&p.wv, &mut g.wv, &cache.x_kv, &dv));
    (dx_q, dx_kv)
}

/// Two-layer GELU feed-forward block.
#[derive(Debug, Clone, PartialEq)]
pub struct Ffn {
    pub w1: Linear,
    pub w2: Linear,
}

impl Ffn {
    pub fn zeros(d: usize, d_ff: usize) -> Ffn {
        Ffn { w1: Linear::zeros(d_ff, d), w2: Linear::zeros(d, d_ff) }
    }

    pub fn init(d: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Ffn {
        Ffn { w1: Linear::init(d_ff, d, rng), w2: Linear::init(d, d_ff, rng) }
    }
}

pub struct FfnCache {
    input: Mat,
    pre: Mat,
    act: Mat,
}

pub fn ffn_forward(p: &Ffn, x: &Mat) -> (Mat, FfnCache) {
    let pre = linear_forward(&p.w1, x);
    let mut act = pre.clone();
    for v in act.data.iter_mut() {
        *v = gelu(*v);
    }
    let out = linear_forward(&p.w2, &act);
    (out, FfnCache { input: x.clone(), pre, act })
}

pub fn ffn_backward(p: &Ffn, g: &mut Ffn, cache: &FfnCache, dy: &Mat) -> Mat {
    let mut d_act = linear_backward(&p.w2, &mut g.w2, &cache.act, dy);
    for (d, &pre) in d_act.data.iter_mut().zip(&cache.pre.data) {
        *d *= gelu_prime(pre);
    }
    linear_backward(&p.w1, &mut g.w1, &cache.input, &d_act)
}
