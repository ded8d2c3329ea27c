use std::path::Path;

use ctxformer::config::RunConfig;
use ctxformer::infer::{cosine_probe, ProbeLayer};
use ctxformer::{Error, Result};

use crate::RunDir;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub similarities: Vec<(ProbeLayer, f64)>,
}

impl ProbeReport {
    pub fn render(&self) -> String {
        self.similarities
            .iter()
            .map(|(layer, s)| format!("{layer}={s:.6}\n"))
            .collect()
    }
}

/// Similarity of `word_a` and `word_b` in `sentence` at the embedding,
/// the first self head and the first word-context head's local
/// convolution of encoder block 0.
pub fn cmd_probe(
    cfg: &RunConfig,
    sentence: &str,
    word_a: &str,
    word_b: &str,
    checkpoint: Option<&Path>,
) -> Result<ProbeReport> {
    cfg.validate()?;
    let words: Vec<String> = sentence.split_whitespace().map(String::from).collect();
    for w in [word_a, word_b] {
        if !words.iter().any(|x| x == w) {
            return Err(Error::data(format!("word {w:?} does not occur in the sentence")));
        }
    }
    let (model, src, _) = RunDir::new(&cfg.out_dir).load_model(cfg, checkpoint)?;
    if src.vocab().get(word_a).is_none() || src.vocab().get(word_b).is_none() {
        return Err(Error::data("probe words must be whole tokens of the source vocabulary"));
    }
    let (ids, _) = src.encode(&words);
    let (a, b) = (src.vocab().id(word_a), src.vocab().id(word_b));
    let layers = [
        ProbeLayer::Embedding,
        ProbeLayer::SelfHead { block: 0, head: 0 },
        ProbeLayer::LocalConv { block: 0, head: 0 },
    ];
    let similarities = layers
        .into_iter()
        .map(|l| cosine_probe(&model, &ids, a, b, l).map(|s| (l, s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeReport { similarities })
}
