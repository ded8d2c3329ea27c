use std::fmt::Write as _;
use std::path::Path;

use ctxformer::config::RunConfig;
use ctxformer::data::read_corpus;
use ctxformer::infer::{bleu, exact_match, teacher_forced_report};
use ctxformer::{Error, Result};

use super::train::encode_pairs;
use crate::RunDir;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub bleu: f64,
    pub exact_match: f64,
    pub pos_acc: Option<f64>,
    pub ner_acc: Option<f64>,
}

impl EvalReport {
    /// `key=value` lines.
    pub fn render(&self) -> String {
        let mut s = format!("bleu={:.4}\nexact_match={:.4}\n", self.bleu, self.exact_match);
        if let Some(p) = self.pos_acc {
            let _ = writeln!(s, "pos_acc={p:.4}");
        }
        if let Some(n) = self.ner_acc {
            let _ = writeln!(s, "ner_acc={n:.4}");
        }
        s
    }
}

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect())
}

/// BLEU and exact match of `hyp` against `reference` (one sentence per
/// line). With `tagged = (config, corpus, checkpoint)`, also reports the
/// run model's POS and NER accuracy on that corpus.
pub fn cmd_eval(
    hyp: &Path,
    reference: &Path,
    tagged: Option<(&RunConfig, &Path, Option<&Path>)>,
) -> Result<EvalReport> {
    let h = read_lines(hyp)?;
    let r = read_lines(reference)?;
    if h.len() != r.len() {
        return Err(Error::data(format!(
            "{} has {} lines but {} has {}",
            hyp.display(),
            h.len(),
            reference.display(),
            r.len()
        )));
    }
    let mut report = EvalReport {
        bleu: bleu(&h, &r)?.bleu,
        exact_match: exact_match(&h, &r)?,
        pos_acc: None,
        ner_acc: None,
    };
    if let Some((cfg, corpus, checkpoint)) = tagged {
        cfg.validate()?;
        let (model, src, tgt) = RunDir::new(&cfg.out_dir).load_model(cfg, checkpoint)?;
        let text = read_corpus(corpus)?;
        let pairs = encode_pairs(&text, &src, &tgt, model.config.max_len, corpus)?;
        let tf = teacher_forced_report(&model, &pairs)?;
        report.pos_acc = tf.pos_acc;
        report.ner_acc = tf.ner_acc;
    }
    Ok(report)
}
