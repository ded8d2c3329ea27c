//! Reverse-mode differentiation over a linear operation record.
//!
//! Nodes are appended in execution order, so every node's inputs have smaller
//! indices than the node itself and walking the record backwards is a reverse
//! topological order.

use rand::Rng;

use super::kernels::{broadcast_map, broadcast_shape, gemm_acc};
use super::value::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    SumLast(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    DepthwiseConv {
        x: Var,
        w: Var,
        dilation: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record plus accumulated leaf gradients.
///
/// A tape belongs to one thread at a time; it is `Send` but not shared.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
    stochastic: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// True once any random-mask op ran in training mode on this tape.
    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- elementwise -------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(ta.shape(), tb.shape())
            .ok_or_else(|| Error::shape(format!("cannot broadcast {:?} with {:?}", ta.shape(), tb.shape())))?;
        let (da, db) = (ta.data(), tb.data());
        let data: Vec<f64> = match (
            broadcast_map(&out_shape, ta.shape()),
            broadcast_map(&out_shape, tb.shape()),
        ) {
            (None, None) => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            (ma, mb) => {
                let n: usize = out_shape.iter().product();
                (0..n)
                    .map(|i| {
                        let ia = ma.as_ref().map_or(i, |m| m[i]);
                        let ib = mb.as_ref().map_or(i, |m| m[i]);
                        f(da[ia], db[ib])
                    })
                    .collect()
            }
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(&out_shape, data)?, op, rg))
    }

    /// Elementwise sum with trailing-axis broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(t.shape(), data).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape(), data).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            Op::Sigmoid(x),
        )
    }

    // ---- reductions --------------------------------------------------

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over the last axis, keeping it with extent 1.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let Some(&last) = t.shape().last() else {
            return Err(Error::shape("sum_last on a scalar"));
        };
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let data = t.data().chunks(last).map(|c| c.iter().sum()).collect();
        let value = Tensor::new(&shape, data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::SumLast(x), rg))
    }

    // ---- linear algebra ----------------------------------------------

    /// `a[.., k] · b[k, n] -> [.., n]`; leading axes of `a` act as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let k = sb[0];
        let n = sb[1];
        let m = ta.numel() / k;
        let mut out = vec![0.0; m * n];
        gemm_acc(
            (m, k, n),
            ta.data(),
            (k as isize, 1),
            tb.data(),
            (n as isize, 1),
            &mut out,
            (n as isize, 1),
        );
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul(a, b), rg))
    }

    /// Batched product `a[G, m, k] · b[G, k, n]`, or `· b[G, n, k]ᵀ` when
    /// `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        let bad = || Error::shape(format!("bmm {sa:?} x {sb:?} (trans_b={trans_b})"));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (g, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(bad());
        }
        let b_strides = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        let mut out = vec![0.0; g * m * n];
        for i in 0..g {
            gemm_acc(
                (m, k, n),
                &ta.data()[i * m * k..(i + 1) * m * k],
                (k as isize, 1),
                &tb.data()[i * k * n..(i + 1) * k * n],
                b_strides,
                &mut out[i * m * n..(i + 1) * m * n],
                (n as isize, 1),
            );
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(&[g, m, n], out)?, Op::Bmm { a, b, trans_b }, rg))
    }

    // ---- layout ------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let r = t.rank();
        let mut seen = vec![false; r];
        if axes.len() != r || axes.iter().any(|&a| a >= r || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape(format!(
                "invalid permutation {axes:?} for {:?}",
                t.shape()
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| t.shape()[a]).collect();
        let src_strides = permuted_strides(t.shape(), axes);
        let mut out = Vec::with_capacity(t.numel());
        for_each_offset(&out_shape, &src_strides, |off| out.push(t.data()[off]));
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::Permute(x, axes.to_vec()), rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape(format!("concat axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(Error::shape(format!("concat {base:?} with {s:?}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.any_grad(inputs);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::shape(format!("narrow axis {axis} [{start}, +{len}) of {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Narrow { x, axis, start }, rg))
    }

    /// Row lookup `table[ids[i], :]`, returning `[ids.len(), d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let s = t.shape();
        if s.len() != 2 {
            return Err(Error::shape(format!("gather from {s:?}")));
        }
        if ids.is_empty() {
            return Err(Error::shape("gather with no ids"));
        }
        let (v, d) = (s[0], s[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for (pos, &id) in ids.iter().enumerate() {
            if id >= v {
                return Err(Error::data(format!(
                    "token id {id} at position {pos} out of range for vocabulary of {v}"
                )));
            }
            out.extend_from_slice(t.row(id));
        }
        let rg = self.any_grad(&[table]);
        Ok(self.push(
            Tensor::new(&[ids.len(), d], out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    // ---- normalisation -----------------------------------------------

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if axis >= s.len() {
            return Err(Error::shape(format!("softmax axis {axis} for {s:?}")));
        }
        let (outer, len, inner) = split_axis(s, axis);
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY || max.is_nan() {
                    return Err(Error::numerical("softmax over a slice with no finite entry"));
                }
                let mut z = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[at(j)] /= z;
                }
            }
        }
        let value = Tensor::new(s, out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Softmax { x, axis }, rg))
    }

    /// Normalises the last axis to zero mean and unit variance, then applies
    /// `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::config("layer_norm eps must be positive"));
        }
        let t = self.value(x);
        let d = *t.shape().last().ok_or_else(|| Error::shape("layer_norm on scalar"))?;
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(Error::shape(format!(
                    "layer_norm affine {:?} for width {d}",
                    self.shape(p)
                )));
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = t.numel() / d;
        let mut xhat = vec![0.0; t.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; t.numel()];
        for r in 0..rows {
            let row = &t.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let xh = (row[c] - mean) * is;
                xhat[r * d + c] = xh;
                out[r * d + c] = g[c] * xh + b[c];
            }
        }
        let value = Tensor::new(t.shape(), out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    // ---- convolution -------------------------------------------------

    /// Depthwise causal dilated convolution over `x[.., T, C]` with kernel
    /// `w[F, C]`:
    /// `out[t, c] = Σ_j w[j, c] · x[t - j·dilation, c]`, zero for negative
    /// positions. Tap `j = 0` is the current position.
    pub fn depthwise_conv(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (sx, sw) = (tx.shape(), tw.shape());
        if dilation == 0 {
            return Err(Error::config("dilation must be at least 1"));
        }
        if sx.len() < 2 || sw.len() != 2 || sw[1] != sx[sx.len() - 1] {
            return Err(Error::shape(format!("depthwise conv input {sx:?} with kernel {sw:?}")));
        }
        let c = sw[1];
        let f = sw[0];
        let t = sx[sx.len() - 2];
        let batches = tx.numel() / (t * c);
        let (xd, wd) = (tx.data(), tw.data());
        let mut out = vec![0.0; xd.len()];
        for b in 0..batches {
            let base = b * t * c;
            for pos in 0..t {
                let o = &mut out[base + pos * c..base + (pos + 1) * c];
                for j in 0..f {
                    let Some(src) = pos.checked_sub(j * dilation) else {
                        break;
                    };
                    let xs = &xd[base + src * c..base + (src + 1) * c];
                    let ws = &wd[j * c..(j + 1) * c];
                    for ch in 0..c {
                        o[ch] += ws[ch] * xs[ch];
                    }
                }
            }
        }
        let value = Tensor::new(sx, out)?;
        let rg = self.any_grad(&[x, w]);
        Ok(self.push(value, Op::DepthwiseConv { x, w, dilation }, rg))
    }

    // ---- losses ------------------------------------------------------

    /// Mean negative log-likelihood of `targets` under `softmax(logits)` over
    /// the last axis. Rows whose target equals `ignore_id` are skipped.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_id: Option<usize>) -> Result<Var> {
        let t = self.value(logits);
        let v = *t.shape().last().ok_or_else(|| Error::shape("logits scalar"))?;
        let rows = t.numel() / v;
        if targets.len() != rows {
            return Err(Error::shape(format!("{} targets for {rows} logit rows", targets.len())));
        }
        let mut probs = vec![0.0; t.numel()];
        let mut keep = Vec::with_capacity(rows);
        let mut total = 0.0;
        let mut count = 0;
        for (r, &target) in targets.iter().enumerate() {
            if Some(target) == ignore_id {
                keep.push(None);
                continue;
            }
            if target >= v {
                return Err(Error::data(format!(
                    "target {target} at row {r} out of range for {v} classes"
                )));
            }
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lz = max + z.ln();
            for (p, x) in probs[r * v..(r + 1) * v].iter_mut().zip(row) {
                *p = (x - lz).exp();
            }
            total += lz - row[target];
            count += 1;
            keep.push(Some(target));
        }
        if count == 0 {
            return Err(Error::data("cross entropy over zero non-ignored targets"));
        }
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / count as f64),
            Op::CrossEntropy {
                logits,
                targets: keep,
                probs,
                count,
            },
            rg,
        ))
    }

    // ---- stochastic regularisers -------------------------------------

    /// Inverted dropout. Identity when not training or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("drop probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let shape = self.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        self.stochastic = true;
        let m = self.constant(Tensor::new(&shape, mask)?);
        self.mul(x, m)
    }

    /// DropConnect: the same masking applied to a weight tensor before use.
    pub fn drop_connect<R: Rng + ?Sized>(&mut self, w: Var, p: f64, rng: &mut R, training: bool) -> Result<Var> {
        self.dropout(w, p, rng, training)
    }

    // ---- backward ----------------------------------------------------

    /// Propagates d`loss` back to every reachable leaf that requires a
    /// gradient. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                lt.shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize(self.nodes.len(), None);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(Tensor::new(node.value.shape(), g)?),
                }
                continue;
            }
            backprop(&self.nodes, i, &g, &mut grads);
        }
        Ok(())
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn permuted_strides(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    axes.iter().map(|&a| strides[a]).collect()
}

/// Visits source offsets in output row-major order.
fn for_each_offset(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize)) {
    let n: usize = shape.iter().product();
    let r = shape.len();
    let mut idx = vec![0; r];
    let mut off = 0;
    for _ in 0..n {
        f(off);
        for d in (0..r).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            off -= strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
}

fn reduce_into(dst: &mut [f64], g: &[f64], map: Option<&[usize]>, sign: f64) {
    match map {
        None => dst.iter_mut().zip(g).for_each(|(d, x)| *d += sign * x),
        Some(m) => {
            for (i, x) in g.iter().enumerate() {
                dst[m[i]] += sign * x;
            }
        }
    }
}

fn backprop(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[i].value;
    let val = |v: Var| &nodes[v.0].value;
    match &nodes[i].op {
        Op::Leaf => unreachable!(),
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign_b = if matches!(nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
            for (v, sign) in [(*a, 1.0), (*b, sign_b)] {
                let map = broadcast_map(out.shape(), val(v).shape());
                if let Some(dst) = slot(grads, nodes, v) {
                    reduce_into(dst, g, map.as_deref(), sign);
                }
            }
        }
        Op::Mul(a, b) => {
            let ma = broadcast_map(out.shape(), val(*a).shape());
            let mb = broadcast_map(out.shape(), val(*b).shape());
            let at = |m: &Option<Vec<usize>>, k: usize| m.as_ref().map_or(k, |m| m[k]);
            let (da, db) = (val(*a).data(), val(*b).data());
            if let Some(dst) = slot(grads, nodes, *a) {
                for k in 0..g.len() {
                    dst[at(&ma, k)] += g[k] * db[at(&mb, k)];
                }
            }
            if let Some(dst) = slot(grads, nodes, *b) {
                for k in 0..g.len() {
                    dst[at(&mb, k)] += g[k] * da[at(&ma, k)];
                }
            }
        }
        Op::Scale(x, c) => {
            if let Some(dst) = slot(grads, nodes, *x) {
                dst.iter_mut().zip(g).for_each(|(d, v)| *d += c * v);
            }
        }
        Op::Relu(x) => {
            let xd = val(*x).data();
            if let Some(dst) = slot(grads, nodes, *x) {
                for k in 0..g.len() {
                    if xd[k] > 0.0 {
                        dst[k] += g[k];
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            let y = out.data();
            if let Some(dst) = slot(grads, nodes, *x) {
                for k in 0..g.len() {
                    dst[k] += g[k] * y[k] * (1.0 - y[k]);
                }
            }
        }
        Op::Sum(x) => {
            if let Some(dst) = slot(grads, nodes, *x) {
                dst.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::SumLast(x) => {
            let last = *val(*x).shape().last().unwrap();
            if let Some(dst) = slot(grads, nodes, *x) {
                for (r, chunk) in dst.chunks_mut(last).enumerate() {
                    chunk.iter_mut().for_each(|d| *d += g[r]);
                }
            }
        }
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (k, n) = (tb.shape()[0], tb.shape()[1]);
            let m = ta.numel() / k;
            if let Some(dst) = slot(grads, nodes, *a) {
                // dA = G · Bᵀ
                gemm_acc(
                    (m, n, k),
                    g,
                    (n as isize, 1),
                    tb.data(),
                    (1, n as isize),
                    dst,
                    (k as isize, 1),
                );
            }
            if let Some(dst) = slot(grads, nodes, *b) {
                // dB = Aᵀ · G
                gemm_acc(
                    (k, m, n),
                    ta.data(),
                    (1, k as isize),
                    g,
                    (n as isize, 1),
                    dst,
                    (n as isize, 1),
                );
            }
        }
        Op::Bmm { a, b, trans_b } => {
            let (ta, tb) = (val(*a), val(*b));
            let (bg, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
            let n = out.shape()[2];
            if let Some(dst) = slot(grads, nodes, *a) {
                // dA = G · B_logicalᵀ
                let bt = if *trans_b { (k as isize, 1) } else { (1, n as isize) };
                for i in 0..bg {
                    gemm_acc(
                        (m, n, k),
                        &g[i * m * n..(i + 1) * m * n],
                        (n as isize, 1),
                        &tb.data()[i * k * n..(i + 1) * k * n],
                        bt,
                        &mut dst[i * m * k..(i + 1) * m * k],
                        (k as isize, 1),
                    );
                }
            }
            if let Some(dst) = slot(grads, nodes, *b) {
                for i in 0..bg {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let ai = &ta.data()[i * m * k..(i + 1) * m * k];
                    let di = &mut dst[i * k * n..(i + 1) * k * n];
                    if *trans_b {
                        // d(B_raw)[n, k] = Gᵀ · A
                        gemm_acc((n, m, k), gi, (1, n as isize), ai, (k as isize, 1), di, (k as isize, 1));
                    } else {
                        // dB[k, n] = Aᵀ · G
                        gemm_acc((k, m, n), ai, (1, k as isize), gi, (n as isize, 1), di, (n as isize, 1));
                    }
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(dst) = slot(grads, nodes, *x) {
                dst.iter_mut().zip(g).for_each(|(d, v)| *d += v);
            }
        }
        Op::Permute(x, axes) => {
            let src_strides = permuted_strides(val(*x).shape(), axes);
            if let Some(dst) = slot(grads, nodes, *x) {
                let mut k = 0;
                for_each_offset(out.shape(), &src_strides, |off| {
                    dst[off] += g[k];
                    k += 1;
                });
            }
        }
        Op::Concat { inputs, axis } => {
            let s = out.shape();
            let (outer, total, inner) = split_axis(s, *axis);
            let mut start = 0;
            for &v in inputs {
                let len = val(v).shape()[*axis];
                if let Some(dst) = slot(grads, nodes, v) {
                    for o in 0..outer {
                        let src = (o * total + start) * inner;
                        let d = o * len * inner;
                        dst[d..d + len * inner]
                            .iter_mut()
                            .zip(&g[src..src + len * inner])
                            .for_each(|(a, b)| *a += b);
                    }
                }
                start += len;
            }
        }
        Op::Narrow { x, axis, start } => {
            let (outer, full, inner) = split_axis(val(*x).shape(), *axis);
            let len = out.shape()[*axis];
            if let Some(dst) = slot(grads, nodes, *x) {
                for o in 0..outer {
                    let d = (o * full + start) * inner;
                    let src = o * len * inner;
                    dst[d..d + len * inner]
                        .iter_mut()
                        .zip(&g[src..src + len * inner])
                        .for_each(|(a, b)| *a += b);
                }
            }
        }
        Op::Gather { table, ids } => {
            let d = val(*table).shape()[1];
            if let Some(dst) = slot(grads, nodes, *table) {
                for (r, &id) in ids.iter().enumerate() {
                    dst[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(&g[r * d..(r + 1) * d])
                        .for_each(|(a, b)| *a += b);
                }
            }
        }
        Op::Softmax { x, axis } => {
            let (outer, len, inner) = split_axis(out.shape(), *axis);
            let y = out.data();
            if let Some(dst) = slot(grads, nodes, *x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| y[at(j)] * g[at(j)]).sum();
                        for j in 0..len {
                            dst[at(j)] += y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let d = val(*gamma).numel();
            let gd = val(*gamma).data();
            let rows = xhat.len() / d;
            if let Some(dst) = slot(grads, nodes, *x) {
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for c in 0..d {
                        let dxh = gr[c] * gd[c];
                        s1 += dxh;
                        s2 += dxh * xh[c];
                    }
                    let scale = inv_std[r] / d as f64;
                    for c in 0..d {
                        let dxh = gr[c] * gd[c];
                        dst[r * d + c] += scale * (d as f64 * dxh - s1 - xh[c] * s2);
                    }
                }
            }
            if let Some(dst) = slot(grads, nodes, *gamma) {
                for r in 0..rows {
                    for c in 0..d {
                        dst[c] += g[r * d + c] * xhat[r * d + c];
                    }
                }
            }
            if let Some(dst) = slot(grads, nodes, *beta) {
                for r in 0..rows {
                    for c in 0..d {
                        dst[c] += g[r * d + c];
                    }
                }
            }
        }
        Op::DepthwiseConv { x, w, dilation } => {
            let (tx, tw) = (val(*x), val(*w));
            let (f, c) = (tw.shape()[0], tw.shape()[1]);
            let t = tx.shape()[tx.rank() - 2];
            let batches = tx.numel() / (t * c);
            let (xd, wd) = (tx.data(), tw.data());
            if let Some(dst) = slot(grads, nodes, *x) {
                for b in 0..batches {
                    let base = b * t * c;
                    for pos in 0..t {
                        for j in 0..f {
                            let Some(src) = pos.checked_sub(j * dilation) else {
                                break;
                            };
                            for ch in 0..c {
                                dst[base + src * c + ch] += wd[j * c + ch] * g[base + pos * c + ch];
                            }
                        }
                    }
                }
            }
            if let Some(dst) = slot(grads, nodes, *w) {
                for b in 0..batches {
                    let base = b * t * c;
                    for pos in 0..t {
                        for j in 0..f {
                            let Some(src) = pos.checked_sub(j * dilation) else {
                                break;
                            };
                            for ch in 0..c {
                                dst[j * c + ch] += xd[base + src * c + ch] * g[base + pos * c + ch];
                            }
                        }
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
            count,
        } => {
            let v = *val(*logits).shape().last().unwrap();
            let scale = g[0] / *count as f64;
            if let Some(dst) = slot(grads, nodes, *logits) {
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = t else { continue };
                    for k in 0..v {
                        let onehot = if k == *t { 1.0 } else { 0.0 };
                        dst[r * v + k] += scale * (probs[r * v + k] - onehot);
                    }
                }
            }
        }
    }
}
