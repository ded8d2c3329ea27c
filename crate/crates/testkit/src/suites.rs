use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctxformer::attention::{
    adaptive_query, dynamic_conv_head, local_conv, multi_head_forward, multi_head_forward_traced, normalized_kernel,
    scaled_dot_product_attention, scaled_dot_product_attention_weights, AttentionMask, MultiHeadParams,
};
use ctxformer::data::{TaggedPair, BOS};
use ctxformer::model::{Model, ModelConfig};
use ctxformer::tensor::{check_gradients, relative_error, ParamStore, Session, Tape, Tensor, Var};
use ctxformer::training::multi_task_loss;
use ctxformer::Result;

use crate::oracle::{self, Mat};
use crate::{rand_tensor, rows};

pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const ORACLE_TOLERANCE: f64 = 1e-10;
pub const SUM_TOLERANCE: f64 = 1e-9;
const FD_STEP: f64 = 1e-5;

/// Worst finite-difference error of one check over all seeds.
#[derive(Clone, Debug)]
pub struct GradResult {
    pub name: &'static str,
    pub seeds: usize,
    pub elements: usize,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

#[derive(Clone, Debug)]
pub struct GradSuite {
    pub results: Vec<GradResult>,
    pub elapsed: Duration,
}

impl GradSuite {
    pub fn passed(&self) -> bool {
        self.results.iter().all(GradResult::passed)
    }
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// `Σ y ⊙ R` with a fixed random `R`, so every output element gets a
/// distinct upstream gradient.
fn weighted(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// Builds one op check: `(name, inputs, f)`, where `f` ends in a weighted sum
/// over an output of shape `out_shape`.
fn op_case(
    rng: &mut ChaCha8Rng,
    name: &'static str,
    inputs: Vec<Tensor>,
    out_shape: &[usize],
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> (&'static str, Vec<Tensor>, OpFn) {
    let w = rand_tensor(rng, out_shape, 1.0);
    (
        name,
        inputs,
        Box::new(move |t, v| {
            let y = f(t, v)?;
            weighted(t, y, &w)
        }),
    )
}

fn op_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor>, OpFn)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights_rng = ChaCha8Rng::seed_from_u64(!seed);
    let (r, wr) = (&mut rng, &mut weights_rng);
    let mut cases = Vec::new();
    let a34 = rand_tensor(r, &[3, 4], 1.0);
    let b34 = rand_tensor(r, &[3, 4], 1.0);
    let b4 = rand_tensor(r, &[4], 1.0);
    cases.push(op_case(wr, "add", vec![a34.clone(), b4.clone()], &[3, 4], |t, v| {
        t.add(v[0], v[1])
    }));
    cases.push(op_case(wr, "sub", vec![a34.clone(), b34.clone()], &[3, 4], |t, v| {
        t.sub(v[0], v[1])
    }));
    cases.push(op_case(
        wr,
        "mul",
        vec![rand_tensor(r, &[2, 3, 4], 1.0), b4.clone()],
        &[2, 3, 4],
        |t, v| t.mul(v[0], v[1]),
    ));
    cases.push(op_case(wr, "scale", vec![a34.clone()], &[3, 4], |t, v| {
        Ok(t.scale(v[0], -1.7))
    }));
    cases.push(op_case(wr, "relu", vec![a34.clone()], &[3, 4], |t, v| Ok(t.relu(v[0]))));
    cases.push(op_case(
        wr,
        "sigmoid",
        vec![rand_tensor(r, &[3, 4], 3.0)],
        &[3, 4],
        |t, v| Ok(t.sigmoid(v[0])),
    ));
    cases.push(op_case(wr, "sum", vec![a34.clone()], &[], |t, v| Ok(t.sum(v[0]))));
    cases.push(op_case(wr, "mean", vec![a34.clone()], &[], |t, v| Ok(t.mean(v[0]))));
    cases.push(op_case(
        wr,
        "sum_last",
        vec![rand_tensor(r, &[2, 3, 4], 1.0)],
        &[2, 3, 1],
        |t, v| t.sum_last(v[0]),
    ));
    cases.push(op_case(
        wr,
        "matmul",
        vec![rand_tensor(r, &[2, 3, 4], 1.0), rand_tensor(r, &[4, 5], 1.0)],
        &[2, 3, 5],
        |t, v| t.matmul(v[0], v[1]),
    ));
    cases.push(op_case(
        wr,
        "bmm",
        vec![rand_tensor(r, &[2, 3, 4], 1.0), rand_tensor(r, &[2, 4, 5], 1.0)],
        &[2, 3, 5],
        |t, v| t.bmm(v[0], v[1], false),
    ));
    cases.push(op_case(
        wr,
        "bmm_transposed",
        vec![rand_tensor(r, &[2, 3, 4], 1.0), rand_tensor(r, &[2, 5, 4], 1.0)],
        &[2, 3, 5],
        |t, v| t.bmm(v[0], v[1], true),
    ));
    cases.push(op_case(wr, "reshape", vec![a34.clone()], &[2, 6], |t, v| {
        t.reshape(v[0], &[2, 6])
    }));
    cases.push(op_case(
        wr,
        "permute",
        vec![rand_tensor(r, &[2, 3, 4], 1.0)],
        &[4, 2, 3],
        |t, v| t.permute(v[0], &[2, 0, 1]),
    ));
    cases.push(op_case(
        wr,
        "concat",
        vec![rand_tensor(r, &[2, 3, 2], 1.0), rand_tensor(r, &[2, 1, 2], 1.0)],
        &[2, 4, 2],
        |t, v| t.concat(&[v[0], v[1]], 1),
    ));
    cases.push(op_case(
        wr,
        "narrow",
        vec![rand_tensor(r, &[2, 5, 3], 1.0)],
        &[2, 2, 3],
        |t, v| t.narrow(v[0], 1, 2, 2),
    ));
    cases.push(op_case(
        wr,
        "gather",
        vec![rand_tensor(r, &[5, 3], 1.0)],
        &[4, 3],
        |t, v| t.gather(v[0], &[4, 0, 4, 2]),
    ));
    cases.push(op_case(
        wr,
        "softmax_last",
        vec![rand_tensor(r, &[2, 3, 4], 2.0)],
        &[2, 3, 4],
        |t, v| t.softmax(v[0], 2),
    ));
    cases.push(op_case(
        wr,
        "softmax_first",
        vec![rand_tensor(r, &[3, 4], 2.0)],
        &[3, 4],
        |t, v| t.softmax(v[0], 0),
    ));
    cases.push(op_case(
        wr,
        "layer_norm",
        vec![
            rand_tensor(r, &[2, 3, 5], 2.0),
            rand_tensor(r, &[5], 1.0),
            rand_tensor(r, &[5], 1.0),
        ],
        &[2, 3, 5],
        |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5),
    ));
    for (name, dilation) in [("depthwise_conv", 1), ("depthwise_conv_dilated", 2)] {
        cases.push(op_case(
            wr,
            name,
            vec![rand_tensor(r, &[2, 6, 3], 1.0), rand_tensor(r, &[3, 3], 1.0)],
            &[2, 6, 3],
            move |t, v| t.depthwise_conv(v[0], v[1], dilation),
        ));
    }
    cases.push(op_case(
        wr,
        "cross_entropy",
        vec![rand_tensor(r, &[2, 3, 4], 2.0)],
        &[],
        |t, v| t.cross_entropy(v[0], &[1, 3, 0, 2, 2, 1], Some(0)),
    ));
    cases.push(op_case(
        wr,
        "attention",
        vec![
            rand_tensor(r, &[5, 3], 1.0),
            rand_tensor(r, &[5, 3], 1.0),
            rand_tensor(r, &[5, 2], 1.0),
        ],
        &[5, 2],
        |t, v| scaled_dot_product_attention(t, v[0], v[1], v[2], Some(&AttentionMask::causal(5))),
    ));
    cases.push(op_case(
        wr,
        "local_conv",
        vec![rand_tensor(r, &[6, 3], 1.0), rand_tensor(r, &[5, 3], 1.0)],
        &[6, 3],
        |t, v| local_conv(t, v[0], v[1], 2),
    ));
    for (name, prefix, out) in [
        ("adaptive_query", false, vec![3]),
        ("adaptive_query_prefix", true, vec![5, 3]),
    ] {
        cases.push(op_case(
            wr,
            name,
            vec![
                rand_tensor(r, &[5, 3], 1.0),
                rand_tensor(r, &[3, 3], 1.0),
                rand_tensor(r, &[3], 1.0),
            ],
            &out,
            move |t, v| adaptive_query(t, v[0], v[1], v[2], prefix),
        ));
    }
    for (name, prefix) in [("conv_head", false), ("conv_head_causal", true)] {
        cases.push(op_case(
            wr,
            name,
            vec![
                rand_tensor(r, &[5, 3], 1.5),
                rand_tensor(r, &[3, 3], 1.0),
                rand_tensor(r, &[3, 3], 1.0),
                rand_tensor(r, &[3], 1.0),
            ],
            &[5, 3],
            move |t, v| dynamic_conv_head(t, v[0], v[1], 1, v[2], v[3], prefix),
        ));
    }
    cases
}

/// Analytic parameter gradients of `loss` against central differences on
/// the store. Every parameter tensor contributes at least one element; up
/// to `per_tensor` elements are drawn from each.
fn store_gradcheck(
    store: &mut ParamStore,
    loss: &dyn Fn(&mut Session) -> Result<Var>,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut sess = Session::new(store, false, 0);
        let l = loss(&mut sess)?;
        Ok(sess.value(l).item())
    };
    let analytic: Vec<(ctxformer::tensor::ParamId, Tensor)> = {
        let mut sess = Session::new(store, false, 0);
        let l = loss(&mut sess)?;
        sess.tape.backward(l)?;
        sess.param_grads().map(|(id, g)| (id, g.clone())).collect()
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).numel();
        let grad = analytic
            .iter()
            .find(|(g, _)| *g == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        let mut picks: Vec<usize> = (0..n).collect();
        picks.shuffle(rng);
        picks.truncate(per_tensor);
        for k in picks {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let fp = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let fm = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let err = relative_error(grad.data()[k], numeric);
            worst = if err.is_finite() { worst.max(err) } else { f64::INFINITY };
            checked += 1;
        }
    }
    Ok((worst, checked))
}

/// Tiny model used by the model-level gradient and causality checks.
pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        h: 2,
        n_blocks: 3,
        kernel_sizes: vec![3, 5, 3],
        dilations: vec![1, 1, 2],
        vocab_src: 11,
        vocab_tgt: 9,
        n_pos_tags: 4,
        n_ner_tags: 3,
        max_len: 12,
        init_seed: seed,
        ..ModelConfig::default()
    }
}

fn random_pairs(rng: &mut ChaCha8Rng, cfg: &ModelConfig, n: usize, src_len: usize, tgt_len: usize) -> Vec<TaggedPair> {
    (0..n)
        .map(|_| TaggedPair {
            src: (0..src_len).map(|_| rng.gen_range(4..cfg.vocab_src)).collect(),
            tgt: (0..tgt_len).map(|_| rng.gen_range(4..cfg.vocab_tgt)).collect(),
            pos_tags: (0..src_len).map(|_| rng.gen_range(0..cfg.n_pos_tags)).collect(),
            ner_tags: (0..src_len).map(|_| rng.gen_range(0..cfg.n_ner_tags)).collect(),
        })
        .collect()
}

fn model_gradcheck(seed: u64, per_tensor: usize) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f_6465_6c00);
    let mut model = Model::new(tiny_config(seed))?;
    let (src_len, tgt_len) = (rng.gen_range(2..6), rng.gen_range(2..6));
    let batch = random_pairs(&mut rng, &model.config, 2, src_len, tgt_len);
    let skeleton = Model::new(tiny_config(seed))?;
    let loss = |sess: &mut Session| -> Result<Var> {
        let out = skeleton.forward_train(sess, &batch)?;
        Ok(multi_task_loss(&mut sess.tape, &out, 0.3, 0.3)?.total)
    };
    store_gradcheck(&mut model.store, &loss, per_tensor, &mut rng)
}

fn multi_head_gradcheck(seed: u64, cross: bool) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d68_6100);
    let mut store = ParamStore::new();
    let params = MultiHeadParams::hybrid(&mut store, "mha", 8, 4, 3, 1, seed)?;
    let x = rand_tensor(&mut rng, &[2, 5, 8], 1.0);
    let mem = rand_tensor(&mut rng, &[2, 4, 8], 1.0);
    let w = rand_tensor(&mut rng, &[2, 5, 8], 1.0);
    let loss = |sess: &mut Session| -> Result<Var> {
        let xv = sess.tape.constant(x.clone());
        let out = if cross {
            let m = sess.tape.constant(mem.clone());
            multi_head_forward(sess, &params, xv, Some(m), None, true)?
        } else {
            multi_head_forward(sess, &params, xv, None, Some(&AttentionMask::causal(5)), true)?
        };
        weighted(&mut sess.tape, out, &w)
    };
    store_gradcheck(&mut store, &loss, usize::MAX, &mut rng)
}

/// Central finite differences for every tape op, the attention building
/// blocks, hybrid multi-head attention (self and cross) and the tiny model,
/// each over `seeds`.
pub fn gradient_suite(seeds: &[u64]) -> Result<GradSuite> {
    let start = Instant::now();
    let mut results: Vec<GradResult> = Vec::new();
    let mut record =
        |name: &'static str, tol: f64, err: f64, elements: usize| match results.iter_mut().find(|r| r.name == name) {
            Some(r) => {
                r.seeds += 1;
                r.elements += elements;
                r.max_rel_error = r.max_rel_error.max(err);
            }
            None => results.push(GradResult {
                name,
                seeds: 1,
                elements,
                max_rel_error: err,
                tol,
            }),
        };
    for &seed in seeds {
        for (name, inputs, f) in op_cases(seed) {
            let report = check_gradients(&f, &inputs, FD_STEP, OP_TOLERANCE)?;
            record(name, OP_TOLERANCE, report.max_rel_error, report.checked);
        }
        let (e, n) = multi_head_gradcheck(seed, false)?;
        record("multi_head_self", OP_TOLERANCE, e, n);
        let (e, n) = multi_head_gradcheck(seed, true)?;
        record("multi_head_cross", OP_TOLERANCE, e, n);
        let (e, n) = model_gradcheck(seed, 6)?;
        record("tiny_model", MODEL_TOLERANCE, e, n);
    }
    Ok(GradSuite {
        results,
        elapsed: start.elapsed(),
    })
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_abs_error: f64,
}

impl OracleResult {
    pub fn passed(&self) -> bool {
        self.max_abs_error <= ORACLE_TOLERANCE
    }
}

fn odd_kernel(rng: &mut ChaCha8Rng) -> usize {
    2 * rng.gen_range(0..4) + 1
}

fn random_mask(rng: &mut ChaCha8Rng, rows_n: usize, cols: usize) -> AttentionMask {
    let keep: Vec<bool> = (0..rows_n * cols).map(|_| rng.gen_bool(0.6)).collect();
    let forced: Vec<usize> = (0..rows_n).map(|_| rng.gen_range(0..cols)).collect();
    AttentionMask::from_fn(rows_n, cols, |i, j| keep[i * cols + j] || forced[i] == j)
}

fn per_head(store: &ParamStore, id: ctxformer::tensor::ParamId) -> Mat {
    rows(store.get(id))
}

/// The oracle view of a multi-head parameter set.
pub fn oracle_multi_head(store: &ParamStore, p: &MultiHeadParams) -> oracle::MultiHead {
    oracle::MultiHead {
        self_heads: p
            .self_heads
            .iter()
            .map(|h| oracle::SelfHead {
                w_q: per_head(store, h.w_q),
                w_k: per_head(store, h.w_k),
                w_v: per_head(store, h.w_v),
            })
            .collect(),
        conv_heads: p
            .conv_heads
            .iter()
            .map(|h| oracle::ConvHead {
                w_in: per_head(store, h.w_in),
                w_a: per_head(store, h.w_a),
                w_s: per_head(store, h.w_s),
                w_q: store.get(h.w_q).data().to_vec(),
                dilation: h.dilation,
            })
            .collect(),
        w_o: per_head(store, p.w_o),
    }
}

fn diff(t: &Tensor, m: &Mat) -> f64 {
    let flat: Vec<f64> = m.iter().flatten().copied().collect();
    assert_eq!(t.numel(), flat.len(), "shape mismatch against oracle");
    t.data()
        .iter()
        .zip(&flat)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Each attention building block against its loop oracle on `instances`
/// random small problems.
pub fn oracle_suite(instances: usize, seed: u64) -> Result<Vec<OracleResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 5];
    for _ in 0..instances {
        let r = &mut rng;
        let (tq, tk) = (r.gen_range(1..8), r.gen_range(1..8));
        let (dk, dv) = (r.gen_range(1..6), r.gen_range(1..6));
        let (q, k, v) = (
            rand_tensor(r, &[tq, dk], 2.0),
            rand_tensor(r, &[tk, dk], 2.0),
            rand_tensor(r, &[tk, dv], 2.0),
        );
        let mask = r.gen_bool(0.5).then(|| random_mask(r, tq, tk));
        let mut tape = Tape::new();
        let (qv, kv, vv) = (
            tape.constant(q.clone()),
            tape.constant(k.clone()),
            tape.constant(v.clone()),
        );
        let got = scaled_dot_product_attention(&mut tape, qv, kv, vv, mask.as_ref())?;
        let allowed = |i: usize, j: usize| mask.as_ref().is_none_or(|m| m.allows(i, j));
        let (want, _) = oracle::attention(&rows(&q), &rows(&k), &rows(&v), &allowed);
        worst[0] = worst[0].max(diff(tape.value(got), &want));

        let (t, c, f, dil) = (r.gen_range(1..10), r.gen_range(1..6), odd_kernel(r), r.gen_range(1..4));
        let s = rand_tensor(r, &[t, c], 2.0);
        let wa = rand_tensor(r, &[f, c], 2.0);
        let mut tape = Tape::new();
        let (sv, wv) = (tape.constant(s.clone()), tape.constant(wa.clone()));
        let got = local_conv(&mut tape, sv, wv, dil)?;
        worst[1] = worst[1].max(diff(tape.value(got), &oracle::local_conv(&rows(&s), &rows(&wa), dil)));

        let prefix = r.gen_bool(0.5);
        let ws = rand_tensor(r, &[c, c], 1.0);
        let wq = rand_tensor(r, &[c], 2.0);
        let mut tape = Tape::new();
        let (sv, wsv, wqv) = (
            tape.constant(s.clone()),
            tape.constant(ws.clone()),
            tape.constant(wq.clone()),
        );
        let got = adaptive_query(&mut tape, sv, wsv, wqv, prefix)?;
        let want = oracle::adaptive_query(&rows(&s), &rows(&ws), wq.data(), prefix);
        let want = if prefix { want } else { vec![want[0].clone()] };
        worst[2] = worst[2].max(diff(tape.value(got), &want));

        let mut tape = Tape::new();
        let (sv, wav, wsv, wqv) = (
            tape.constant(s.clone()),
            tape.constant(wa.clone()),
            tape.constant(ws.clone()),
            tape.constant(wq.clone()),
        );
        let got = dynamic_conv_head(&mut tape, sv, wav, dil, wsv, wqv, prefix)?;
        let want = oracle::conv_head(&rows(&s), &rows(&wa), dil, &rows(&ws), wq.data(), prefix);
        worst[3] = worst[3].max(diff(tape.value(got), &want));

        let h = 2 * r.gen_range(1..4);
        let d = h * r.gen_range(1..4);
        let mut store = ParamStore::new();
        let params = MultiHeadParams::hybrid(&mut store, "m", d, h, odd_kernel(r), r.gen_range(1..3), r.gen())?;
        let t = r.gen_range(1..8);
        let x = rand_tensor(r, &[t, d], 1.5);
        let cross = r.gen_bool(0.5);
        let causal = r.gen_bool(0.5);
        let t_mem = r.gen_range(1..8);
        let mem = rand_tensor(r, &[t_mem, d], 1.5);
        let mut sess = Session::inference(&store);
        let xv = sess.tape.constant(x.clone());
        let got = if cross {
            let m = sess.tape.constant(mem.clone());
            multi_head_forward(&mut sess, &params, xv, Some(m), None, causal)?
        } else {
            let mask = causal.then(|| AttentionMask::causal(t));
            multi_head_forward(&mut sess, &params, xv, None, mask.as_ref(), causal)?
        };
        let mh = oracle_multi_head(&store, &params);
        let mem_rows = rows(&mem);
        let want = oracle::multi_head(&mh, &rows(&x), cross.then_some(&mem_rows), causal);
        worst[4] = worst[4].max(diff(sess.value(got), &want));
    }
    let names = ["attention", "local_conv", "adaptive_query", "conv_head", "multi_head"];
    Ok(names
        .into_iter()
        .zip(worst)
        .map(|(name, max_abs_error)| OracleResult {
            name,
            instances,
            max_abs_error,
        })
        .collect())
}

#[derive(Clone, Debug, Default)]
pub struct CausalityReport {
    pub cases: usize,
    /// Cases where an output at or before the cut changed.
    pub model_violations: usize,
    pub self_head_violations: usize,
    pub conv_head_violations: usize,
    /// Cases where nothing after the cut changed either, so the case proved
    /// nothing.
    pub insensitive: usize,
}

impl CausalityReport {
    pub fn passed(&self) -> bool {
        self.model_violations + self.self_head_violations + self.conv_head_violations == 0
    }
}

/// Returns `(prefix identical, suffix changed)` for `[.., T, C]` tensors
/// compared up to row `cut`.
fn split_compare(a: &Tensor, b: &Tensor, cut: usize) -> (bool, bool) {
    let s = a.shape();
    let (t, c) = (s[s.len() - 2], s[s.len() - 1]);
    let mut same = true;
    let mut changed = false;
    for (k, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        let row = (k / c) % t;
        if row <= cut {
            same &= x.to_bits() == y.to_bits();
        } else {
            changed |= x.to_bits() != y.to_bits();
        }
    }
    (same, changed)
}

/// Perturbs decoder inputs after a random cut and checks that everything at
/// or before the cut is bit-for-bit unchanged: full-model logits, the
/// self-head outputs and the conv-head outputs of a causal hybrid block.
pub fn causality_suite(cases: usize, seed: u64) -> Result<CausalityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CausalityReport {
        cases,
        ..Default::default()
    };
    for case in 0..cases {
        let r = &mut rng;
        let mut cfg = tiny_config(seed.wrapping_add(case as u64));
        cfg.kernel_sizes = (0..3).map(|_| odd_kernel(r)).collect();
        cfg.dilations = (0..3).map(|_| r.gen_range(1..3)).collect();
        let model = Model::new(cfg)?;
        let vt = model.config.vocab_tgt;
        let src: Vec<usize> = (0..r.gen_range(1..7))
            .map(|_| r.gen_range(4..model.config.vocab_src))
            .collect();
        let t = r.gen_range(2..9);
        let tgt: Vec<usize> = std::iter::once(BOS).chain((1..t).map(|_| r.gen_range(4..vt))).collect();
        let cut = r.gen_range(0..t - 1);
        let mut other = tgt.clone();
        for tok in &mut other[cut + 1..] {
            *tok = 4 + (*tok - 4 + r.gen_range(1..vt - 4)) % (vt - 4);
        }
        let logits = |tokens: &[usize]| -> Result<Tensor> {
            let mut sess = Session::inference(&model.store);
            let enc = model.encode(&mut sess, std::slice::from_ref(&src))?;
            let l = model.decode(&mut sess, enc.memory, &[tokens.to_vec()])?;
            Ok(sess.value(l).clone())
        };
        let (same, changed) = split_compare(&logits(&tgt)?, &logits(&other)?, cut);
        report.model_violations += usize::from(!same);
        report.insensitive += usize::from(!changed);

        let h = 2 * r.gen_range(1..3);
        let d = h * r.gen_range(1..4);
        let mut store = ParamStore::new();
        let params = MultiHeadParams::hybrid(&mut store, "m", d, h, odd_kernel(r), r.gen_range(1..3), r.gen())?;
        let x = rand_tensor(r, &[t, d], 1.5);
        let mut y = x.clone();
        for k in (cut + 1) * d..t * d {
            y.data_mut()[k] += r.gen_range(0.5..2.0);
        }
        let mask = AttentionMask::causal(t);
        let run = |input: &Tensor| -> Result<(Tensor, Tensor)> {
            let mut sess = Session::inference(&store);
            let v = sess.tape.constant(input.clone());
            let (_, trace) = multi_head_forward_traced(&mut sess, &params, v, None, Some(&mask), true)?;
            let sh = trace.self_heads.expect("hybrid block has self heads");
            let ch = trace.conv.expect("hybrid block has conv heads").output;
            Ok((sess.value(sh).clone(), sess.value(ch).clone()))
        };
        let ((sa, ca), (sb, cb)) = (run(&x)?, run(&y)?);
        report.self_head_violations += usize::from(!split_compare(&sa, &sb, cut).0);
        report.conv_head_violations += usize::from(!split_compare(&ca, &cb, cut).0);
    }
    Ok(report)
}

#[derive(Clone, Debug, Default)]
pub struct NormalizationReport {
    pub configs: usize,
    pub max_attention_row_error: f64,
    pub max_kernel_column_error: f64,
    /// Conv heads whose kernel does not hold exactly `F·d_h` weights.
    pub kernel_count_mismatches: usize,
    pub kernels_checked: usize,
}

impl NormalizationReport {
    pub fn passed(&self) -> bool {
        self.max_attention_row_error <= SUM_TOLERANCE
            && self.max_kernel_column_error <= SUM_TOLERANCE
            && self.kernel_count_mismatches == 0
    }
}

/// Row sums of attention weights, column sums of normalised conv kernels
/// (including the DropConnect-free kernels built inside hybrid blocks), and
/// the depthwise kernel size.
pub fn normalization_suite(configs: usize, seed: u64) -> Result<NormalizationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = NormalizationReport {
        configs,
        ..Default::default()
    };
    for _ in 0..configs {
        let r = &mut rng;
        let (g, tq, tk, dk) = (
            r.gen_range(1..4),
            r.gen_range(1..10),
            r.gen_range(1..10),
            r.gen_range(1..8),
        );
        let scale = r.gen_range(0.1..20.0);
        let mut tape = Tape::new();
        let q = tape.constant(rand_tensor(r, &[g, tq, dk], scale));
        let k = tape.constant(rand_tensor(r, &[g, tk, dk], scale));
        let v = tape.constant(rand_tensor(r, &[g, tk, 2], 1.0));
        let mask = r.gen_bool(0.5).then(|| random_mask(r, tq, tk));
        let (_, w) = scaled_dot_product_attention_weights(&mut tape, q, k, v, mask.as_ref())?;
        for row in tape.value(w).data().chunks(tk) {
            rep.max_attention_row_error = rep.max_attention_row_error.max((row.iter().sum::<f64>() - 1.0).abs());
        }

        let h = 2 * r.gen_range(1..5);
        let d = h * r.gen_range(1..5);
        let f = odd_kernel(r);
        let mut store = ParamStore::new();
        let params = MultiHeadParams::hybrid(&mut store, "m", d, h, f, 1, r.gen())?;
        let dh = d / h;
        for head in &params.conv_heads {
            rep.kernels_checked += 1;
            rep.kernel_count_mismatches += usize::from(store.get(head.w_a).numel() != f * dh);
            let logits = rand_tensor(r, &[f, dh], scale);
            let mut tape = Tape::new();
            let wa = tape.constant(logits);
            let kern = normalized_kernel(&mut tape, wa)?;
            let kv = tape.value(kern);
            for ch in 0..dh {
                let s: f64 = (0..f).map(|j| kv.data()[j * dh + ch]).sum();
                rep.max_kernel_column_error = rep.max_kernel_column_error.max((s - 1.0).abs());
            }
        }
    }
    Ok(rep)
}
