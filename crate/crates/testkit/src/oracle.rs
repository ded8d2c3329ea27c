//! Straight nested-loop versions of every attention building block. Inputs
//! are plain row-major matrices, so nothing here touches the tape.

pub type Mat = Vec<Vec<f64>>;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax_masked(logits: &[f64], allowed: impl Fn(usize) -> bool) -> Vec<f64> {
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| allowed(j))
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(j, &x)| if allowed(j) { (x - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner);
            (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect()
        })
        .collect()
}

/// `softmax(q kᵀ/√d_k) v` with `allowed(i, j)` deciding which keys a query sees.
pub fn attention(q: &Mat, k: &Mat, v: &Mat, allowed: &dyn Fn(usize, usize) -> bool) -> (Mat, Mat) {
    let dk = q[0].len() as f64;
    let mut out = Vec::new();
    let mut weights = Vec::new();
    for (i, qi) in q.iter().enumerate() {
        let scores: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / dk.sqrt())
            .collect();
        let w = softmax_masked(&scores, |j| allowed(i, j));
        let mut o = vec![0.0; v[0].len()];
        for (j, vj) in v.iter().enumerate() {
            for (c, x) in vj.iter().enumerate() {
                o[c] += w[j] * x;
            }
        }
        out.push(o);
        weights.push(w);
    }
    (out, weights)
}

/// Kernel logits `[F][C]` softmaxed down each channel column.
pub fn normalized_kernel(w_a: &Mat) -> Mat {
    let f = w_a.len();
    let c = w_a[0].len();
    let mut out = vec![vec![0.0; c]; f];
    for ch in 0..c {
        let col: Vec<f64> = (0..f).map(|j| w_a[j][ch]).collect();
        for (j, p) in softmax_masked(&col, |_| true).into_iter().enumerate() {
            out[j][ch] = p;
        }
    }
    out
}

/// `L[t][c] = Σ_j kernel[j][c] · s[t - j·dilation][c]`, causal with zero padding.
pub fn local_conv(s: &Mat, w_a: &Mat, dilation: usize) -> Mat {
    let kernel = normalized_kernel(w_a);
    let c = s[0].len();
    (0..s.len())
        .map(|t| {
            (0..c)
                .map(|ch| {
                    let mut acc = 0.0;
                    for (j, kj) in kernel.iter().enumerate() {
                        if t >= j * dilation {
                            acc += kj[ch] * s[t - j * dilation][ch];
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// One query row per position: `Σ_{u∈U(t)} softmax_u(s_u · w_q) · (s_u · W_S)`,
/// where `U(t)` is `0..=t` for prefix queries and every position otherwise.
pub fn adaptive_query(s: &Mat, w_s: &Mat, w_q: &[f64], prefix: bool) -> Mat {
    let n = s.len();
    let proj = matmul(s, w_s);
    let logits: Vec<f64> = s
        .iter()
        .map(|row| row.iter().zip(w_q).map(|(a, b)| a * b).sum())
        .collect();
    (0..n)
        .map(|t| {
            let w = softmax_masked(&logits, |u| !prefix || u <= t);
            let mut q = vec![0.0; w_s[0].len()];
            for (u, pu) in proj.iter().enumerate() {
                for (c, x) in pu.iter().enumerate() {
                    q[c] += w[u] * x;
                }
            }
            q
        })
        .collect()
}

/// Word-context head: `sigmoid(⟨L_t, Q_t⟩/√d_h) · L_t`.
pub fn conv_head(s: &Mat, w_a: &Mat, dilation: usize, w_s: &Mat, w_q: &[f64], prefix: bool) -> Mat {
    let l = local_conv(s, w_a, dilation);
    let q = adaptive_query(s, w_s, w_q, prefix);
    let dh = s[0].len() as f64;
    l.iter()
        .zip(&q)
        .map(|(lt, qt)| {
            let score: f64 = lt.iter().zip(qt).map(|(a, b)| a * b).sum::<f64>() / dh.sqrt();
            let g = sigmoid(score);
            lt.iter().map(|x| g * x).collect()
        })
        .collect()
}

pub struct SelfHead {
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
}

pub struct ConvHead {
    pub w_in: Mat,
    pub w_a: Mat,
    pub w_s: Mat,
    pub w_q: Vec<f64>,
    pub dilation: usize,
}

pub struct MultiHead {
    pub self_heads: Vec<SelfHead>,
    pub conv_heads: Vec<ConvHead>,
    pub w_o: Mat,
}

/// Concatenated head outputs (self heads, then conv heads) times `W^O`.
///
/// With `memory`, self heads read keys and values from it and conv heads
/// attend from the prefix query of `x` over the local representation of the
/// memory. `causal` applies the triangular mask to self heads in
/// self-attention mode and selects prefix queries for conv heads.
pub fn multi_head(mh: &MultiHead, x: &Mat, memory: Option<&Mat>, causal: bool) -> Mat {
    let kv = memory.unwrap_or(x);
    let mut parts: Vec<Mat> = Vec::new();
    for h in &mh.self_heads {
        let q = matmul(x, &h.w_q);
        let k = matmul(kv, &h.w_k);
        let v = matmul(kv, &h.w_v);
        let mask = |i: usize, j: usize| memory.is_some() || !causal || j <= i;
        parts.push(attention(&q, &k, &v, &mask).0);
    }
    for h in &mh.conv_heads {
        let s = matmul(x, &h.w_in);
        let out = match memory {
            None => conv_head(&s, &h.w_a, h.dilation, &h.w_s, &h.w_q, causal),
            Some(m) => {
                let q = adaptive_query(&s, &h.w_s, &h.w_q, causal);
                let l = local_conv(&matmul(m, &h.w_in), &h.w_a, h.dilation);
                attention(&q, &l, &l, &|_, _| true).0
            }
        };
        parts.push(out);
    }
    let merged: Mat = (0..x.len())
        .map(|t| parts.iter().flat_map(|p| p[t].iter().copied()).collect())
        .collect();
    matmul(&merged, &mh.w_o)
}

/// Per-row `(x − mean)/√(var + eps) · gamma + beta` with population variance.
pub fn layer_norm(x: &Mat, gamma: &[f64], beta: &[f64], eps: f64) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter()
                .enumerate()
                .map(|(c, v)| (v - mean) * inv * gamma[c] + beta[c])
                .collect()
        })
        .collect()
}

pub fn linear(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    matmul(x, w)
        .into_iter()
        .map(|row| row.iter().zip(b).map(|(v, bias)| v + bias).collect())
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn relu(x: &Mat) -> Mat {
    x.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()
}

/// `log softmax` of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lz = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lz).collect()
}
