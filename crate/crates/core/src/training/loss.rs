use crate::error::Result;
use crate::model::TrainOutputs;
use crate::tensor::{Tape, Var};

/// The weighted objective and its unweighted components.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub translation: Var,
    pub pos: Option<Var>,
    pub ner: Option<Var>,
}

/// `CE_translation + λ_pos·CE_pos + λ_ner·CE_ner`. A tagging term with zero
/// weight is still computed for reporting but left out of `total`, so it
/// sends no gradient.
pub fn multi_task_loss(tape: &mut Tape, out: &TrainOutputs, lambda_pos: f64, lambda_ner: f64) -> Result<LossParts> {
    let translation = tape.cross_entropy(out.translation_logits, &out.translation_targets, None)?;
    let pos = match out.pos_logits {
        Some(l) => Some(tape.cross_entropy(l, &out.pos_targets, None)?),
        None => None,
    };
    let ner = match out.ner_logits {
        Some(l) => Some(tape.cross_entropy(l, &out.ner_targets, None)?),
        None => None,
    };
    let mut total = translation;
    for (term, lambda) in [(pos, lambda_pos), (ner, lambda_ner)] {
        if let (Some(t), true) = (term, lambda > 0.0) {
            let weighted = tape.scale(t, lambda);
            total = tape.add(total, weighted)?;
        }
    }
    Ok(LossParts {
        total,
        translation,
        pos,
        ner,
    })
}
