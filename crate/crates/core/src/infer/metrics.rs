use crate::data::{make_batches, pair_tokens, TaggedPair};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Session, Tensor};

/// Accuracies of a teacher-forced pass.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherForcedReport {
    /// Next-token accuracy over target tokens and the end marker.
    pub token_acc: f64,
    /// Fraction of pairs with every target position correct.
    pub sentence_acc: f64,
    pub pos_acc: Option<f64>,
    pub ner_acc: Option<f64>,
}

fn argmax(row: &[f64]) -> usize {
    (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b })
}

fn hits(logits: &Tensor, targets: &[usize]) -> Vec<bool> {
    let v = *logits.shape().last().unwrap();
    targets
        .iter()
        .enumerate()
        .map(|(i, &t)| argmax(&logits.data()[i * v..(i + 1) * v]) == t)
        .collect()
}

pub fn teacher_forced_report(model: &Model, pairs: &[TaggedPair]) -> Result<TeacherForcedReport> {
    if pairs.is_empty() {
        return Err(Error::data("no pairs to evaluate"));
    }
    let budget = pairs.iter().map(pair_tokens).max().unwrap_or(1) * 64;
    let (mut tok, mut tok_n, mut sent) = (0usize, 0usize, 0usize);
    let (mut pos, mut ner, mut tag_n) = (0usize, 0usize, 0usize);
    let mut have_tags = (false, false);
    for batch in make_batches(pairs, budget, 0)? {
        let mut sess = Session::inference(&model.store);
        let out = model.forward_train(&mut sess, &batch)?;
        let h = hits(sess.value(out.translation_logits), &out.translation_targets);
        let per = h.len() / batch.len();
        tok += h.iter().filter(|&&x| x).count();
        tok_n += h.len();
        sent += h.chunks(per).filter(|c| c.iter().all(|&x| x)).count();
        tag_n += out.pos_targets.len();
        if let Some(l) = out.pos_logits {
            have_tags.0 = true;
            pos += hits(sess.value(l), &out.pos_targets).iter().filter(|&&x| x).count();
        }
        if let Some(l) = out.ner_logits {
            have_tags.1 = true;
            ner += hits(sess.value(l), &out.ner_targets).iter().filter(|&&x| x).count();
        }
    }
    let frac = |a: usize, b: usize| a as f64 / b as f64;
    Ok(TeacherForcedReport {
        token_acc: frac(tok, tok_n),
        sentence_acc: frac(sent, pairs.len()),
        pos_acc: have_tags.0.then(|| frac(pos, tag_n)),
        ner_acc: have_tags.1.then(|| frac(ner, tag_n)),
    })
}

/// Fraction of hypotheses identical to their reference.
pub fn exact_match<T: PartialEq>(hypotheses: &[T], references: &[T]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::data(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::data("exact match over an empty list"));
    }
    let same = hypotheses.iter().zip(references).filter(|(h, r)| h == r).count();
    Ok(same as f64 / hypotheses.len() as f64)
}
