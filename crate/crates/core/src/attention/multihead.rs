use super::heads::{
    dynamic_conv_heads, from_heads_major, heads_major, normalized_kernel, scaled_dot_product_attention, AttentionMask,
    ConvHeadOutput,
};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Session, Var};

/// Per-head projections `W^Q_i, W^K_i, W^V_i`, each `[d, d/H]`.
#[derive(Clone, Copy, Debug)]
pub struct SelfHeadParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

/// One word-context head.
///
/// `w_in[d, d_h]` projects the model input to the head, `w_a[F, d_h]` holds
/// kernel logits, `w_s[d_h, d_h]` and `w_q[d_h]` produce the adaptive query.
#[derive(Clone, Copy, Debug)]
pub struct ConvHeadParams {
    pub w_in: ParamId,
    pub w_a: ParamId,
    pub w_s: ParamId,
    pub w_q: ParamId,
    pub kernel_size: usize,
    pub dilation: usize,
}

#[derive(Clone, Debug)]
pub struct MultiHeadParams {
    pub h_total: usize,
    pub d_model: usize,
    pub self_heads: Vec<SelfHeadParams>,
    pub conv_heads: Vec<ConvHeadParams>,
    pub w_o: ParamId,
    /// DropConnect probability on the normalised conv kernels.
    pub dropconnect: f64,
}

fn check_dims(d_model: usize, h_total: usize) -> Result<usize> {
    if h_total == 0 || !d_model.is_multiple_of(h_total) {
        return Err(Error::config(format!(
            "d_model {d_model} is not divisible by {h_total} heads"
        )));
    }
    Ok(d_model / h_total)
}

fn add_self_heads(
    store: &mut ParamStore,
    prefix: &str,
    d: usize,
    dh: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<SelfHeadParams>> {
    (0..count)
        .map(|j| {
            let p = format!("{prefix}.self.{j}");
            Ok(SelfHeadParams {
                w_q: store.add_uniform(format!("{p}.q"), &[d, dh], d, seed)?,
                w_k: store.add_uniform(format!("{p}.k"), &[d, dh], d, seed)?,
                w_v: store.add_uniform(format!("{p}.v"), &[d, dh], d, seed)?,
            })
        })
        .collect()
}

impl MultiHeadParams {
    /// `H/2` scaled dot-product heads followed by `H/2` word-context heads.
    pub fn hybrid(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        h_total: usize,
        kernel_size: usize,
        dilation: usize,
        seed: u64,
    ) -> Result<Self> {
        if !h_total.is_multiple_of(2) {
            return Err(Error::config(format!(
                "hybrid attention needs an even head count, got {h_total}"
            )));
        }
        if kernel_size == 0 || kernel_size.is_multiple_of(2) {
            return Err(Error::config(format!(
                "kernel size must be odd and positive, got {kernel_size}"
            )));
        }
        if dilation == 0 {
            return Err(Error::config("dilation must be at least 1"));
        }
        let dh = check_dims(d_model, h_total)?;
        let half = h_total / 2;
        let self_heads = add_self_heads(store, prefix, d_model, dh, half, seed)?;
        let conv_heads = (0..half)
            .map(|j| {
                let p = format!("{prefix}.conv.{j}");
                Ok(ConvHeadParams {
                    w_in: store.add_uniform(format!("{p}.w_in"), &[d_model, dh], d_model, seed)?,
                    w_a: store.add_uniform(format!("{p}.w_a"), &[kernel_size, dh], kernel_size, seed)?,
                    w_s: store.add_uniform(format!("{p}.w_s"), &[dh, dh], dh, seed)?,
                    w_q: store.add_uniform(format!("{p}.w_q"), &[dh], dh, seed)?,
                    kernel_size,
                    dilation,
                })
            })
            .collect::<Result<_>>()?;
        let w_o = store.add_uniform(format!("{prefix}.w_o"), &[d_model, d_model], d_model, seed)?;
        Ok(MultiHeadParams {
            h_total,
            d_model,
            self_heads,
            conv_heads,
            w_o,
            dropconnect: 0.0,
        })
    }

    /// All `H` heads are scaled dot-product heads.
    pub fn self_only(store: &mut ParamStore, prefix: &str, d_model: usize, h_total: usize, seed: u64) -> Result<Self> {
        let dh = check_dims(d_model, h_total)?;
        let self_heads = add_self_heads(store, prefix, d_model, dh, h_total, seed)?;
        let w_o = store.add_uniform(format!("{prefix}.w_o"), &[d_model, d_model], d_model, seed)?;
        Ok(MultiHeadParams {
            h_total,
            d_model,
            self_heads,
            conv_heads: Vec::new(),
            w_o,
            dropconnect: 0.0,
        })
    }

    pub fn head_width(&self) -> usize {
        self.d_model / self.h_total
    }

    /// Closed-form weight count of a hybrid block.
    pub fn hybrid_param_count(d_model: usize, h_total: usize, kernel_size: usize) -> usize {
        let dh = d_model / h_total;
        let half = h_total / 2;
        half * 3 * d_model * dh + half * (d_model * dh + kernel_size * dh + dh * dh + dh) + d_model * d_model
    }

    pub fn self_only_param_count(d_model: usize) -> usize {
        3 * d_model * d_model + d_model * d_model
    }

    fn validate(&self) -> Result<()> {
        if self.self_heads.len() + self.conv_heads.len() != self.h_total {
            return Err(Error::config("head lists do not add up to h_total"));
        }
        if !self.conv_heads.is_empty() && !self.h_total.is_multiple_of(2) {
            return Err(Error::config(format!(
                "hybrid attention needs an even head count, got {}",
                self.h_total
            )));
        }
        check_dims(self.d_model, self.h_total).map(|_| ())
    }
}

/// Intermediate values of one multi-head pass.
#[derive(Clone, Copy, Debug)]
pub struct AttentionTrace {
    /// Concatenated self-head outputs, `[B, T_q, (H/2)·d_h]`.
    pub self_heads: Option<Var>,
    /// Word-context head intermediates (self-attention mode only).
    pub conv: Option<ConvHeadOutput>,
}

/// Hybrid multi-head attention. `key_seq = None` means self-attention over
/// `query_seq`. Head outputs are concatenated self heads first, then conv
/// heads, and mixed by `W^O`.
pub fn multi_head_forward(
    sess: &mut Session,
    params: &MultiHeadParams,
    query_seq: Var,
    key_seq: Option<Var>,
    mask: Option<&AttentionMask>,
    causal_conv: bool,
) -> Result<Var> {
    multi_head_forward_traced(sess, params, query_seq, key_seq, mask, causal_conv).map(|(o, _)| o)
}

pub fn multi_head_forward_traced(
    sess: &mut Session,
    params: &MultiHeadParams,
    query_seq: Var,
    key_seq: Option<Var>,
    mask: Option<&AttentionMask>,
    causal_conv: bool,
) -> Result<(Var, AttentionTrace)> {
    params.validate()?;
    let lift = |sess: &mut Session, x: Var| -> Result<(Var, bool)> {
        let s = sess.tape.shape(x).to_vec();
        match s.len() {
            2 => Ok((sess.tape.reshape(x, &[1, s[0], s[1]])?, true)),
            3 => Ok((x, false)),
            _ => Err(Error::shape(format!("attention input {s:?}"))),
        }
    };
    let (xq, lifted) = lift(sess, query_seq)?;
    let xk = match key_seq {
        Some(k) => Some(lift(sess, k)?.0),
        None => None,
    };
    let d = params.d_model;
    for x in std::iter::once(xq).chain(xk) {
        if sess.tape.shape(x)[2] != d {
            return Err(Error::shape(format!(
                "attention input {:?} for d_model {d}",
                sess.tape.shape(x)
            )));
        }
    }
    let kv_src = xk.unwrap_or(xq);
    let mut parts = Vec::with_capacity(2);
    let mut trace = AttentionTrace {
        self_heads: None,
        conv: None,
    };

    let hs = params.self_heads.len();
    if hs > 0 {
        let cat = |sess: &mut Session, pick: fn(&SelfHeadParams) -> ParamId| -> Result<Var> {
            let vars: Vec<Var> = params.self_heads.iter().map(|h| sess.p(pick(h))).collect();
            sess.tape.concat(&vars, 1)
        };
        let wq = cat(sess, |h| h.w_q)?;
        let wk = cat(sess, |h| h.w_k)?;
        let wv = cat(sess, |h| h.w_v)?;
        let q = sess.tape.matmul(xq, wq)?;
        let k = sess.tape.matmul(kv_src, wk)?;
        let v = sess.tape.matmul(kv_src, wv)?;
        let q = heads_major(&mut sess.tape, q, hs)?;
        let k = heads_major(&mut sess.tape, k, hs)?;
        let v = heads_major(&mut sess.tape, v, hs)?;
        let o = scaled_dot_product_attention(&mut sess.tape, q, k, v, mask)?;
        let o = from_heads_major(&mut sess.tape, o, hs)?;
        trace.self_heads = Some(o);
        parts.push(o);
    }

    let hc = params.conv_heads.len();
    if hc > 0 {
        let heads = &params.conv_heads;
        let dilation = heads[0].dilation;
        if heads.iter().any(|h| h.dilation != dilation) {
            return Err(Error::config("conv heads of one block must share a dilation"));
        }
        let dh = params.head_width();
        let w_in: Vec<Var> = heads.iter().map(|h| sess.p(h.w_in)).collect();
        let w_in = sess.tape.concat(&w_in, 1)?;
        let w_a: Vec<Var> = heads.iter().map(|h| sess.p(h.w_a)).collect();
        let w_a = sess.tape.concat(&w_a, 1)?;
        let w_s: Vec<Var> = heads.iter().map(|h| sess.p(h.w_s)).collect();
        let w_s = sess.tape.concat(&w_s, 0)?;
        let w_s = sess.tape.reshape(w_s, &[hc, dh, dh])?;
        let w_q: Vec<Var> = heads.iter().map(|h| sess.p(h.w_q)).collect();
        let w_q = sess.tape.concat(&w_q, 0)?;
        let w_q = sess.tape.reshape(w_q, &[hc, dh])?;

        let kernel = normalized_kernel(&mut sess.tape, w_a)?;
        let training = sess.training();
        let kernel = sess
            .tape
            .drop_connect(kernel, params.dropconnect, &mut sess.rng, training)?;

        let s_proj = sess.tape.matmul(xq, w_in)?;
        let out = match xk {
            None => {
                let o = dynamic_conv_heads(&mut sess.tape, s_proj, kernel, dilation, w_s, w_q, hc, causal_conv)?;
                trace.conv = Some(o);
                o.output
            }
            Some(mem) => {
                // Cross attention: the context query comes from the decoder
                // prefix, the local representations from the memory.
                let m_proj = sess.tape.matmul(mem, w_in)?;
                let local = sess.tape.depthwise_conv(m_proj, kernel, dilation)?;
                let query = super::heads::adaptive_query_heads(&mut sess.tape, s_proj, w_s, w_q, hc, causal_conv)?;
                let qh = heads_major(&mut sess.tape, query, hc)?;
                let lh = heads_major(&mut sess.tape, local, hc)?;
                let o = scaled_dot_product_attention(&mut sess.tape, qh, lh, lh, None)?;
                from_heads_major(&mut sess.tape, o, hc)?
            }
        };
        parts.push(out);
    }

    let merged = if parts.len() == 1 {
        parts[0]
    } else {
        sess.tape.concat(&parts, 2)?
    };
    let w_o = sess.p(params.w_o);
    let mut out = sess.tape.matmul(merged, w_o)?;
    if lifted {
        let s = sess.tape.shape(out).to_vec();
        out = sess.tape.reshape(out, &s[1..])?;
    }
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_heads_split_evenly() {
        let mut store = ParamStore::new();
        let p = MultiHeadParams::hybrid(&mut store, "enc.0.mha", 64, 16, 3, 1, 0).unwrap();
        assert_eq!(p.self_heads.len(), 8);
        assert_eq!(p.conv_heads.len(), 8);
        assert_eq!(store.numel(), MultiHeadParams::hybrid_param_count(64, 16, 3));
        assert!(store.id("enc.0.mha.conv.7.w_a").is_some());
        assert!(store.id("enc.0.mha.self.7.v").is_some());
    }

    #[test]
    fn odd_head_count_is_config_error() {
        let mut store = ParamStore::new();
        let err = MultiHeadParams::hybrid(&mut store, "x", 9, 3, 3, 1, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn depthwise_kernel_has_f_times_width_weights() {
        let mut store = ParamStore::new();
        let p = MultiHeadParams::hybrid(&mut store, "m", 32, 4, 7, 2, 3).unwrap();
        for h in &p.conv_heads {
            assert_eq!(store.get(h.w_a).numel(), 7 * 8);
        }
    }
}
