use super::{DecodeConfig, DecodeOutcome, DecodeStrategy, StepScorer};
use crate::data::BOS;
use crate::error::Result;
use crate::model::Model;
use crate::tensor::{Session, Tensor};

/// Next-token log-probabilities from a model for one encoded source.
pub struct ModelScorer<'m> {
    model: &'m Model,
    /// Encoder output `[T_src, d]`.
    memory: Tensor,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m Model, src: &[usize]) -> Result<Self> {
        let mut sess = Session::inference(&model.store);
        let enc = model.encode(&mut sess, &[src.to_vec()])?;
        let m = sess.value(enc.memory);
        let memory = m.reshaped(&m.shape()[1..])?;
        Ok(ModelScorer { model, memory })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_tgt
    }

    fn next_log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let b = prefixes.len();
        let (t_src, d) = (self.memory.shape()[0], self.memory.shape()[1]);
        let mut sess = Session::inference(&self.model.store);
        let memory = Tensor::new(&[b, t_src, d], self.memory.data().repeat(b))?;
        let memory = sess.tape.constant(memory);
        let inputs: Vec<Vec<usize>> = prefixes
            .iter()
            .map(|p| std::iter::once(BOS).chain(p.iter().copied()).collect())
            .collect();
        let logits = self.model.decode(&mut sess, memory, &inputs)?;
        let l = sess.value(logits);
        let (t, v) = (l.shape()[1], l.shape()[2]);
        Ok((0..b)
            .map(|i| {
                let row = &l.data()[(i * t + t - 1) * v..(i * t + t) * v];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lz = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                row.iter().map(|x| x - lz).collect()
            })
            .collect())
    }
}

/// Decodes one source sentence.
pub fn translate(
    model: &Model,
    src: &[usize],
    strategy: &dyn DecodeStrategy,
    config: &DecodeConfig,
) -> Result<DecodeOutcome> {
    let mut scorer = ModelScorer::new(model, src)?;
    strategy.decode(&mut scorer, config)
}
