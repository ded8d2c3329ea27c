use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Session;

/// Which representation of a source position the probe compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeLayer {
    /// Scaled embedding plus position encoding.
    Embedding,
    /// Output of one scaled dot-product head in an encoder block.
    SelfHead { block: usize, head: usize },
    /// Local convolution output of one word-context head in an encoder
    /// block, before the query gate.
    LocalConv { block: usize, head: usize },
}

impl Default for ProbeLayer {
    fn default() -> Self {
        ProbeLayer::LocalConv { block: 0, head: 0 }
    }
}

impl fmt::Display for ProbeLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbeLayer::Embedding => write!(f, "embedding"),
            ProbeLayer::SelfHead { block, head } => write!(f, "self_head:{block}:{head}"),
            ProbeLayer::LocalConv { block, head } => write!(f, "local_conv:{block}:{head}"),
        }
    }
}

impl FromStr for ProbeLayer {
    type Err = Error;

    /// `embedding`, `self_head[:block[:head]]` or `local_conv[:block[:head]]`.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default();
        let mut num = || -> Result<usize> {
            parts.next().map_or(Ok(0), |p| {
                p.parse()
                    .map_err(|_| Error::config(format!("bad index {p} in probe layer {s}")))
            })
        };
        let layer = match kind {
            "embedding" => ProbeLayer::Embedding,
            "self_head" => ProbeLayer::SelfHead {
                block: num()?,
                head: num()?,
            },
            "local_conv" => ProbeLayer::LocalConv {
                block: num()?,
                head: num()?,
            },
            _ => return Err(Error::config(format!("unknown probe layer {s}"))),
        };
        if parts.next().is_some() {
            return Err(Error::config(format!("trailing fields in probe layer {s}")));
        }
        Ok(layer)
    }
}

/// `⟨a, b⟩ / (‖a‖·‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::numerical("cosine similarity of a zero vector"));
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Cosine similarity between the representations of the first occurrences
/// of `word_a` and `word_b` in `sentence`, at `layer` of the encoder.
pub fn cosine_probe(model: &Model, sentence: &[usize], word_a: usize, word_b: usize, layer: ProbeLayer) -> Result<f64> {
    let find = |w: usize| {
        sentence
            .iter()
            .position(|&t| t == w)
            .ok_or_else(|| Error::data(format!("token {w} does not occur in the probe sentence")))
    };
    let (ia, ib) = (find(word_a)?, find(word_b)?);
    let mut sess = Session::inference(&model.store);
    let x = model.embed(&mut sess, model.src_embed, &[sentence.to_vec()])?;
    let (rep, head) = match layer {
        ProbeLayer::Embedding => (x, None),
        ProbeLayer::SelfHead { block, head } | ProbeLayer::LocalConv { block, head } => {
            if block >= model.encoders.len() {
                return Err(Error::config(format!(
                    "probe block {block} but the encoder has {} blocks",
                    model.encoders.len()
                )));
            }
            let mut h = x;
            for l in &model.encoders[..block] {
                h = model.encoder_layer(&mut sess, l, h)?.0;
            }
            let (_, _, trace) = model.encoder_layer_traced(&mut sess, &model.encoders[block], h)?;
            let var = match layer {
                ProbeLayer::SelfHead { .. } => trace.self_heads,
                _ => trace.conv.map(|c| c.local),
            };
            let var =
                var.ok_or_else(|| Error::config(format!("encoder block {block} has no heads of kind {layer}")))?;
            (var, Some(head))
        }
    };
    let t = sess.value(rep);
    let width = *t.shape().last().unwrap();
    let (lo, hi) = match head {
        None => (0, width),
        Some(j) => {
            let dh = model.config.d_model / model.config.h;
            if (j + 1) * dh > width {
                return Err(Error::config(format!("probe head {j} out of range")));
            }
            (j * dh, (j + 1) * dh)
        }
    };
    let row = |i: usize| &t.data()[i * width + lo..i * width + hi];
    cosine_similarity(row(ia), row(ib))
}
