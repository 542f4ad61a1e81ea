//! Building blocks of one encoder layer, recorded on a [`Tape`].

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Mat;

/// Pre-norm multi-head self-attention with a residual connection.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bq: ParamId,
    pub bk: ParamId,
    pub bv: ParamId,
    pub bo: ParamId,
    pub heads: usize,
}

impl AttentionParams {
    pub fn declare(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut w = |n: &str, r: usize, c: usize, init: Init| store.declare(&format!("{prefix}/{n}"), r, c, init, rng);
        Self {
            ln_gain: w("ln_gain", 1, dim, Init::Ones),
            ln_bias: w("ln_bias", 1, dim, Init::Zeros),
            wq: w("wq", dim, dim, Init::FanIn(dim)),
            wk: w("wk", dim, dim, Init::FanIn(dim)),
            wv: w("wv", dim, dim, Init::FanIn(dim)),
            wo: w("wo", dim, dim, Init::FanIn(dim)),
            bq: w("bq", 1, dim, Init::Zeros),
            bk: w("bk", 1, dim, Init::Zeros),
            bv: w("bv", 1, dim, Init::Zeros),
            bo: w("bo", 1, dim, Init::Zeros),
            heads,
        }
    }
}

/// `x + MHA(LN(x))`; with `causal`, row `i` attends to rows `<= i` only.
pub fn self_attention(tape: &mut Tape, x: Var, p: &AttentionParams, causal: bool) -> Var {
    let (g, b) = (tape.param(p.ln_gain), tape.param(p.ln_bias));
    let normed = tape.layer_norm(x, g, b);
    let mut proj = |w, bias| {
        let (w, bias) = (tape.param(w), tape.param(bias));
        tape.linear(normed, w, bias)
    };
    let (q, k, v) = (proj(p.wq, p.bq), proj(p.wk, p.bk), proj(p.wv, p.bv));
    let dim = tape.value(x).cols();
    let dh = dim / p.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let heads: Vec<Var> = (0..p.heads)
        .map(|h| {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let scores = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores, causal);
            tape.matmul(attn, vh)
        })
        .collect();
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
    let (wo, bo) = (tape.param(p.wo), tape.param(p.bo));
    let out = tape.linear(cat, wo, bo);
    tape.add(x, out)
}

/// Two affine maps with a ReLU between, plus a residual connection when the
/// input and output widths agree.
#[derive(Clone, Debug)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FfnParams {
    pub fn declare(store: &mut ParamStore, prefix: &str, dim_in: usize, hidden: usize, dim_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut w = |n: &str, r: usize, c: usize, init: Init| store.declare(&format!("{prefix}/{n}"), r, c, init, rng);
        Self {
            w1: w("w1", dim_in, hidden, Init::FanIn(dim_in)),
            b1: w("b1", 1, hidden, Init::Zeros),
            w2: w("w2", hidden, dim_out, Init::FanIn(hidden)),
            b2: w("b2", 1, dim_out, Init::Zeros),
        }
    }
}

pub fn ffn(tape: &mut Tape, x: Var, p: &FfnParams) -> Var {
    let (w1, b1, w2, b2) = (tape.param(p.w1), tape.param(p.b1), tape.param(p.w2), tape.param(p.b2));
    let h = tape.linear(x, w1, b1);
    let h = tape.relu(h);
    let out = tape.linear(h, w2, b2);
    if tape.value(out).cols() == tape.value(x).cols() {
        tape.add(x, out)
    } else {
        out
    }
}

/// Dense shift attention: length-mixing MLP, DenseShift blend, then a shared
/// attention + FFN applied to both the blended and the original sequence.
#[derive(Clone, Debug)]
pub struct DsaParams {
    /// `L x L` length-mixing weights.
    pub w1: ParamId,
    pub w2: ParamId,
    pub attn: AttentionParams,
    pub ffn: FfnParams,
}

/// Convolutional attention: depthwise conv with a residual, attention, FFN.
#[derive(Clone, Debug)]
pub struct CaParams {
    /// `k x C` depthwise kernel.
    pub conv: ParamId,
    pub attn: AttentionParams,
    pub ffn: FfnParams,
}

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub dsa: DsaParams,
    pub ca: CaParams,
}

impl LayerParams {
    #[allow(clippy::too_many_arguments)]
    pub fn declare(
        store: &mut ParamStore,
        prefix: &str,
        len: usize,
        dim_in: usize,
        repr_dim: usize,
        heads: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w1 = store.declare(&format!("{prefix}/dsa/w1"), len, len, Init::FanIn(len), rng);
        let w2 = store.declare(&format!("{prefix}/dsa/w2"), len, len, Init::FanIn(len), rng);
        let dsa_attn = AttentionParams::declare(store, &format!("{prefix}/dsa/attn"), dim_in, heads, rng);
        let dsa_ffn = FfnParams::declare(store, &format!("{prefix}/dsa/ffn"), dim_in, 2 * repr_dim, repr_dim, rng);
        let conv = store.declare(&format!("{prefix}/ca/conv"), kernel, dim_in, Init::FanIn(kernel), rng);
        let ca_attn = AttentionParams::declare(store, &format!("{prefix}/ca/attn"), dim_in, heads, rng);
        let ca_ffn = FfnParams::declare(store, &format!("{prefix}/ca/ffn"), dim_in, 2 * repr_dim, repr_dim, rng);
        Self { dsa: DsaParams { w1, w2, attn: dsa_attn, ffn: dsa_ffn }, ca: CaParams { conv, attn: ca_attn, ffn: ca_ffn } }
    }
}

/// Rows selected by the DenseShift mask: `i mod gap == 0`.
pub fn dense_shift_mask(len: usize, gap: usize) -> Vec<bool> {
    (0..len).map(|i| i % gap == 0).collect()
}

/// `M[i][j] = 1` iff `i <= j`: output position `j` mixes inputs `<= j` only.
fn causal_weight_mask(len: usize) -> Mat {
    let mut m = Mat::zeros(len, len);
    for i in 0..len {
        for j in i..len {
            m[(i, j)] = 1.0;
        }
    }
    m
}

/// Length-mixing MLP on the transposed view, returned in `[L][C]` layout:
/// `(ReLU(Fᵀ W1) W2 + Fᵀ)ᵀ`.
pub fn dsa_global(tape: &mut Tape, f: Var, p: &DsaParams, causal: bool) -> Var {
    let (mut w1, mut w2) = (tape.param(p.w1), tape.param(p.w2));
    if causal {
        let mask = tape.input(causal_weight_mask(tape.value(f).rows()));
        w1 = tape.mul(w1, mask);
        w2 = tape.mul(w2, mask);
    }
    let ft = tape.transpose(f);
    let h = tape.matmul(ft, w1);
    let h = tape.relu(h);
    let h = tape.matmul(h, w2);
    let h = tape.add(h, ft);
    tape.transpose(h)
}

/// DenseShift blend: masked rows from `global`, the rest from `f`.
pub fn dense_shift(tape: &mut Tape, global: Var, f: Var, gap: usize) -> Var {
    let mask = dense_shift_mask(tape.value(f).rows(), gap);
    tape.row_select(global, f, mask)
}

pub fn dsa_forward(tape: &mut Tape, f: Var, p: &DsaParams, gap: usize, causal: bool) -> Var {
    let global = dsa_global(tape, f, p, causal);
    let fm = dense_shift(tape, global, f, gap);
    let a = self_attention(tape, fm, &p.attn, causal);
    let a = ffn(tape, a, &p.ffn);
    let b = self_attention(tape, f, &p.attn, causal);
    let b = ffn(tape, b, &p.ffn);
    tape.add(a, b)
}

/// Depthwise convolution with "same" padding, or left padding when causal.
pub fn conv_same(tape: &mut Tape, f: Var, kernel: ParamId, causal: bool) -> Var {
    let k = tape.param(kernel);
    let size = tape.value(k).rows();
    let pad = if causal { size - 1 } else { (size - 1) / 2 };
    tape.depthwise_conv(f, k, pad)
}

pub fn ca_forward(tape: &mut Tape, f: Var, p: &CaParams, causal: bool) -> Var {
    let c = conv_same(tape, f, p.conv, causal);
    let x = tape.add(c, f);
    let x = self_attention(tape, x, &p.attn, causal);
    ffn(tape, x, &p.ffn)
}

/// `alpha · CA(f) + (1 - alpha) · DSA(f)`. The degenerate weights 0 and 1
/// skip the unused branch, so the result equals the other branch bitwise.
pub fn layer_forward(tape: &mut Tape, f: Var, p: &LayerParams, alpha: f64, gap: usize, causal: bool) -> Var {
    if alpha == 1.0 {
        return ca_forward(tape, f, &p.ca, causal);
    }
    if alpha == 0.0 {
        return dsa_forward(tape, f, &p.dsa, gap, causal);
    }
    let ca = ca_forward(tape, f, &p.ca, causal);
    let dsa = dsa_forward(tape, f, &p.dsa, gap, causal);
    let ca = tape.scale(ca, alpha);
    let dsa = tape.scale(dsa, 1.0 - alpha);
    tape.add(ca, dsa)
}
