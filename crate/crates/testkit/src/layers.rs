//! Step-by-step recomputation of model layers from raw parameter values.

use ctxformer::model::{DecoderLayer, EncoderLayer, FeedForward, LayerNormParams, Linear};
use ctxformer::tensor::ParamStore;

use crate::oracle::{self, Mat};
use crate::rows;
use crate::suites::oracle_multi_head;

fn vec_of(store: &ParamStore, id: ctxformer::tensor::ParamId) -> Vec<f64> {
    store.get(id).data().to_vec()
}

pub fn linear(store: &ParamStore, l: &Linear, x: &Mat) -> Mat {
    oracle::linear(x, &rows(store.get(l.w)), &vec_of(store, l.b))
}

fn norm(store: &ParamStore, ln: &LayerNormParams, x: &Mat, eps: f64) -> Mat {
    oracle::layer_norm(x, &vec_of(store, ln.gamma), &vec_of(store, ln.beta), eps)
}

fn ffn(store: &ParamStore, f: &FeedForward, x: &Mat) -> Mat {
    linear(store, &f.outer, &oracle::relu(&linear(store, &f.inner, x)))
}

/// Post-norm encoder block; returns the block output and the tagging logits
/// when the block has a head.
pub fn encoder_layer(store: &ParamStore, layer: &EncoderLayer, x: &Mat, eps: f64) -> (Mat, Option<Mat>) {
    let a = oracle::multi_head(&oracle_multi_head(store, &layer.mha), x, None, false);
    let h = norm(store, &layer.ln_attn, &oracle::add(x, &a), eps);
    let f = ffn(store, &layer.ffn, &h);
    let y = norm(store, &layer.ln_ffn, &oracle::add(&h, &f), eps);
    let aux = layer.aux.as_ref().map(|(_, head)| linear(store, head, &y));
    (y, aux)
}

pub fn decoder_layer(store: &ParamStore, layer: &DecoderLayer, y: &Mat, memory: &Mat, eps: f64) -> Mat {
    let a = oracle::multi_head(&oracle_multi_head(store, &layer.self_mha), y, None, true);
    let h1 = norm(store, &layer.ln_self, &oracle::add(y, &a), eps);
    let c = oracle::multi_head(&oracle_multi_head(store, &layer.cross_mha), &h1, Some(memory), true);
    let h2 = norm(store, &layer.ln_cross, &oracle::add(&h1, &c), eps);
    let f = ffn(store, &layer.ffn, &h2);
    norm(store, &layer.ln_ffn, &oracle::add(&h2, &f), eps)
}
