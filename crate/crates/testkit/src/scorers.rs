//! Hand-set next-token distributions for checking decoders without a model.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctxformer::data::EOS;
use ctxformer::infer::StepScorer;
use ctxformer::Result;

/// Sequences with their summed log-probabilities.
pub type Scored = Vec<(Vec<usize>, f64)>;

/// Log-probabilities drawn once per prefix from a stream keyed by the
/// prefix and a seed; `sharpness` scales the logits before normalising.
pub struct TableScorer {
    vocab: usize,
    seed: u64,
    sharpness: f64,
    table: HashMap<Vec<usize>, Vec<f64>>,
}

impl TableScorer {
    pub fn new(vocab: usize, seed: u64, sharpness: f64) -> Self {
        TableScorer {
            vocab,
            seed,
            sharpness,
            table: HashMap::new(),
        }
    }

    pub fn row(&mut self, prefix: &[usize]) -> Vec<f64> {
        let (v, seed, sharp) = (self.vocab, self.seed, self.sharpness);
        self.table
            .entry(prefix.to_vec())
            .or_insert_with(|| {
                let key = prefix.iter().fold(seed.wrapping_mul(31), |h, &t| {
                    h.wrapping_mul(1_000_003) ^ (t as u64 + 1)
                });
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                let logits: Vec<f64> = (0..v).map(|_| sharp * rng.gen_range(-1.0..1.0)).collect();
                let lz = logits.iter().map(|x| x.exp()).sum::<f64>().ln();
                logits.iter().map(|x| x - lz).collect()
            })
            .clone()
    }

    /// All sequences up to `max_len` tokens with their log-probabilities:
    /// those ending in the end id, then the unfinished ones of full length.
    pub fn enumerate(&mut self, max_len: usize) -> (Scored, Scored) {
        let (mut done, mut open) = (Vec::new(), vec![(Vec::new(), 0.0)]);
        for _ in 0..max_len {
            let mut next = Vec::new();
            for (p, lp) in open {
                let row = self.row(&p);
                for (tok, &l) in row.iter().enumerate() {
                    let mut q: Vec<usize> = p.clone();
                    q.push(tok);
                    if tok == EOS {
                        done.push((q, lp + l));
                    } else {
                        next.push((q, lp + l));
                    }
                }
            }
            open = next;
        }
        (done, open)
    }
}

impl StepScorer for TableScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        Ok(prefixes.iter().map(|p| self.row(p)).collect())
    }
}
