//! Single-family attention primitives.
//!
//! Every function accepts an optional leading batch axis: `[T, C]` or
//! `[G, T, C]`. Conv-head functions additionally work on several heads at
//! once, laid out channel-wise as `[.., T, heads · d_h]`.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Allowed/forbidden pattern between query rows and key columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let allowed = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        AttentionMask { rows, cols, allowed }
    }

    /// Forbids exactly the strict upper triangle.
    pub fn causal(t: usize) -> Self {
        Self::from_fn(t, t, |i, j| j <= i)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    /// Additive score bias: 0 where allowed, −∞ where forbidden.
    pub fn bias(&self) -> Tensor {
        let data = self
            .allowed
            .iter()
            .map(|&a| if a { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        Tensor::new(&[self.rows, self.cols], data).expect("mask shape")
    }
}

/// Lifts `[T, C]` to `[1, T, C]`; returns whether it did.
fn batched(tape: &mut Tape, x: Var) -> Result<(Var, bool)> {
    match tape.shape(x).len() {
        2 => {
            let s = tape.shape(x).to_vec();
            Ok((tape.reshape(x, &[1, s[0], s[1]])?, true))
        }
        3 => Ok((x, false)),
        _ => Err(Error::shape(format!(
            "expected [T, C] or [G, T, C], got {:?}",
            tape.shape(x)
        ))),
    }
}

fn unbatch(tape: &mut Tape, x: Var, lifted: bool) -> Result<Var> {
    if !lifted {
        return Ok(x);
    }
    let s = tape.shape(x).to_vec();
    tape.reshape(x, &s[1..])
}

/// `softmax(q·kᵀ / √d_k) · v`, returning the output and the weight matrix.
pub fn scaled_dot_product_attention_weights(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&AttentionMask>,
) -> Result<(Var, Var)> {
    let (q3, lifted) = batched(tape, q)?;
    let (k3, _) = batched(tape, k)?;
    let (v3, _) = batched(tape, v)?;
    let (sq, sk, sv) = (
        tape.shape(q3).to_vec(),
        tape.shape(k3).to_vec(),
        tape.shape(v3).to_vec(),
    );
    if sk[1] != sv[1] || sk[0] != sv[0] || sq[0] != sk[0] {
        return Err(Error::shape(format!("attention q {sq:?}, k {sk:?}, v {sv:?}")));
    }
    let dk = sq[2];
    let raw = tape.bmm(q3, k3, true)?;
    let mut scores = tape.scale(raw, 1.0 / (dk as f64).sqrt());
    if let Some(mask) = mask {
        if mask.rows() != sq[1] || mask.cols() != sk[1] {
            return Err(Error::shape(format!(
                "mask {}x{} for scores {}x{}",
                mask.rows(),
                mask.cols(),
                sq[1],
                sk[1]
            )));
        }
        if let Some(row) = (0..mask.rows()).find(|&i| (0..mask.cols()).all(|j| !mask.allows(i, j))) {
            return Err(Error::shape(format!("mask row {row} has no valid attendee")));
        }
        let bias = tape.constant(mask.bias());
        scores = tape.add(scores, bias)?;
    }
    let weights = tape.softmax(scores, 2)?;
    let out = tape.bmm(weights, v3, false)?;
    Ok((unbatch(tape, out, lifted)?, unbatch(tape, weights, lifted)?))
}

/// Scaled dot-product attention; see [`scaled_dot_product_attention_weights`].
pub fn scaled_dot_product_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&AttentionMask>,
) -> Result<Var> {
    scaled_dot_product_attention_weights(tape, q, k, v, mask).map(|(o, _)| o)
}

/// Softmax over the temporal axis of kernel logits `[F, C]`.
pub fn normalized_kernel(tape: &mut Tape, w_a: Var) -> Result<Var> {
    if tape.shape(w_a).len() != 2 {
        return Err(Error::shape(format!("kernel {:?}", tape.shape(w_a))));
    }
    tape.softmax(w_a, 0)
}

/// Adaptive sequence module: depthwise causal dilated convolution with a
/// kernel softmax-normalised along `F`, so each output is a convex
/// combination of the current and earlier inputs of its channel.
pub fn local_conv(tape: &mut Tape, s: Var, w_a: Var, dilation: usize) -> Result<Var> {
    let kernel = normalized_kernel(tape, w_a)?;
    tape.depthwise_conv(s, kernel, dilation)
}

/// Reorders `[B, T, H·d_h]` into `[H·B, T, d_h]` (head-major).
pub(crate) fn heads_major(tape: &mut Tape, x: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let (b, t, c) = (s[0], s[1], s[2]);
    let dh = c / heads;
    let x4 = tape.reshape(x, &[b, t, heads, dh])?;
    let p = tape.permute(x4, &[2, 0, 1, 3])?;
    tape.reshape(p, &[heads * b, t, dh])
}

/// Inverse of [`heads_major`].
pub(crate) fn from_heads_major(tape: &mut Tape, x: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let (g, t, dh) = (s[0], s[1], s[2]);
    let b = g / heads;
    let x4 = tape.reshape(x, &[heads, b, t, dh])?;
    let p = tape.permute(x4, &[1, 2, 0, 3])?;
    tape.reshape(p, &[b, t, heads * dh])
}

/// Adaptive query for several heads at once.
///
/// `s` is `[.., T, heads·d_h]`, `w_s` is `[heads, d_h, d_h]`, `w_q` is
/// `[heads, d_h]`. Per head: `Query = Σ_t (s·W^S)_t · softmax_t(s·W^Q)`.
/// With `prefix` set, row `t` only sums positions `≤ t`; otherwise every row
/// holds the same full-sequence query. Output has the shape of `s`.
pub fn adaptive_query_heads(tape: &mut Tape, s: Var, w_s: Var, w_q: Var, heads: usize, prefix: bool) -> Result<Var> {
    let (s3, lifted) = batched(tape, s)?;
    let shape = tape.shape(s3).to_vec();
    let (b, t, c) = (shape[0], shape[1], shape[2]);
    if heads == 0 || c % heads != 0 {
        return Err(Error::shape(format!("{c} channels over {heads} heads")));
    }
    let dh = c / heads;
    if tape.shape(w_s) != [heads, dh, dh] || tape.shape(w_q) != [heads, dh] {
        return Err(Error::shape(format!(
            "adaptive query weights {:?} / {:?} for {heads} heads of width {dh}",
            tape.shape(w_s),
            tape.shape(w_q)
        )));
    }
    let s4 = tape.reshape(s3, &[b, t, heads, dh])?;
    let hp = tape.permute(s4, &[2, 0, 1, 3])?;
    let flat = tape.reshape(hp, &[heads, b * t, dh])?;
    let projected = tape.bmm(flat, w_s, false)?;
    let wq3 = tape.reshape(w_q, &[heads, dh, 1])?;
    let logits = tape.bmm(flat, wq3, false)?;
    let logits = tape.reshape(logits, &[heads * b, 1, t])?;
    let bias = if prefix {
        AttentionMask::causal(t).bias()
    } else {
        Tensor::zeros(&[t, t])
    };
    let bias = tape.constant(bias);
    let scores = tape.add(logits, bias)?;
    let weights = tape.softmax(scores, 2)?;
    let values = tape.reshape(projected, &[heads * b, t, dh])?;
    let q = tape.bmm(weights, values, false)?;
    let q = from_heads_major(tape, q, heads)?;
    unbatch(tape, q, lifted)
}

/// Single-head adaptive query: `s[T, d_h]`, `w_s[d_h, d_h]`, `w_q[d_h]`.
/// Returns `[d_h]`, or `[T, d_h]` with one prefix query per position when
/// `prefix` is set.
pub fn adaptive_query(tape: &mut Tape, s: Var, w_s: Var, w_q: Var, prefix: bool) -> Result<Var> {
    let dh = *tape.shape(w_q).first().unwrap_or(&0);
    let ws = tape.reshape(w_s, &[1, dh, dh])?;
    let wq = tape.reshape(w_q, &[1, dh])?;
    let q = adaptive_query_heads(tape, s, ws, wq, 1, prefix)?;
    if prefix {
        Ok(q)
    } else {
        let rank = tape.shape(q).len();
        let first = tape.narrow(q, rank - 2, 0, 1)?;
        tape.reshape(first, &[dh])
    }
}

/// Output of the word-context heads, with the local representation kept for
/// probing.
#[derive(Clone, Copy, Debug)]
pub struct ConvHeadOutput {
    pub output: Var,
    pub local: Var,
    pub query: Var,
}

/// Word-context heads over a channel-stacked projection `s_proj[.., T, H·d_h]`.
///
/// `L = local conv(s_proj)`, `q = adaptive query(s_proj)`,
/// `score_t = ⟨L_t, q_t⟩ / √d_h` per head, and the head emits
/// `sigmoid(score_t) · L_t`. `kernel` must already be softmax-normalised.
#[allow(clippy::too_many_arguments)]
pub fn dynamic_conv_heads(
    tape: &mut Tape,
    s_proj: Var,
    kernel: Var,
    dilation: usize,
    w_s: Var,
    w_q: Var,
    heads: usize,
    causal_query: bool,
) -> Result<ConvHeadOutput> {
    let local = tape.depthwise_conv(s_proj, kernel, dilation)?;
    let query = adaptive_query_heads(tape, s_proj, w_s, w_q, heads, causal_query)?;
    let shape = tape.shape(local).to_vec();
    let c = *shape.last().unwrap();
    let dh = c / heads;
    let mut split = shape[..shape.len() - 1].to_vec();
    split.extend([heads, dh]);
    let prod = tape.mul(local, query)?;
    let prod = tape.reshape(prod, &split)?;
    let score = tape.sum_last(prod)?;
    let score = tape.scale(score, 1.0 / (dh as f64).sqrt());
    let gate = tape.sigmoid(score);
    let l4 = tape.reshape(local, &split)?;
    let gated = tape.mul(l4, gate)?;
    let output = tape.reshape(gated, &shape)?;
    Ok(ConvHeadOutput { output, local, query })
}

/// One word-context head on `s_proj[T, d_h]` with kernel logits `w_a[F, d_h]`.
pub fn dynamic_conv_head(
    tape: &mut Tape,
    s_proj: Var,
    w_a: Var,
    dilation: usize,
    w_s: Var,
    w_q: Var,
    causal_query: bool,
) -> Result<Var> {
    let dh = *tape.shape(w_q).first().unwrap_or(&0);
    let kernel = normalized_kernel(tape, w_a)?;
    let ws = tape.reshape(w_s, &[1, dh, dh])?;
    let wq = tape.reshape(w_q, &[1, dh])?;
    dynamic_conv_heads(tape, s_proj, kernel, dilation, ws, wq, 1, causal_query).map(|o| o.output)
}
