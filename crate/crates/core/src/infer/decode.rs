use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::data::EOS;
use crate::error::{Error, Result};

/// Next-token distributions for a batch of equal-length prefixes. Prefixes
/// exclude the begin marker; the scorer supplies it.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;

    fn eos(&self) -> usize {
        EOS
    }

    /// One row of log-probabilities over the vocabulary per prefix.
    fn next_log_probs(&mut self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Length-penalty exponent.
    pub alpha: f64,
    pub max_decode_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 5,
            alpha: 0.5,
            max_decode_len: 32,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_decode_len == 0 {
            return Err(Error::config("beam_size and max_decode_len must be at least 1"));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::config(format!(
                "alpha must be finite and ≥ 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// `((5 + len) / 6)^α`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens; a finished hypothesis ends with the end id.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    pub fn score(&self, alpha: f64) -> f64 {
        self.log_prob / length_penalty(self.tokens.len(), alpha)
    }

    /// Tokens without the trailing end id.
    pub fn output(&self) -> &[usize] {
        match self.finished {
            true => &self.tokens[..self.tokens.len() - 1],
            false => &self.tokens,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutcome {
    pub best: Hypothesis,
    /// Set when no hypothesis produced the end id within the length limit;
    /// `best` is then the top unfinished hypothesis.
    pub unfinished: bool,
}

/// Best-first order of final hypotheses: normalised score, then tokens.
fn final_order(a: &Hypothesis, b: &Hypothesis, alpha: f64) -> Ordering {
    b.score(alpha)
        .total_cmp(&a.score(alpha))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn pick_final(finished: Vec<Hypothesis>, alive: Vec<Hypothesis>, alpha: f64) -> Result<DecodeOutcome> {
    let unfinished = finished.is_empty();
    let pool = if unfinished { alive } else { finished };
    let best = pool
        .into_iter()
        .min_by(|a, b| final_order(a, b, alpha))
        .ok_or_else(|| Error::numerical("decoding produced no hypothesis"))?;
    Ok(DecodeOutcome { best, unfinished })
}

fn check_row(row: &[f64], v: usize) -> Result<()> {
    if row.len() != v {
        return Err(Error::shape(format!(
            "scorer returned {} scores for vocabulary {v}",
            row.len()
        )));
    }
    if row.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::numerical("scorer returned NaN or +inf log-probabilities"));
    }
    Ok(())
}

/// A decoding algorithm selectable by name.
pub trait DecodeStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn decode(&self, scorer: &mut dyn StepScorer, config: &DecodeConfig) -> Result<DecodeOutcome>;
}

/// Arg-max token at every step; ties go to the lower id.
pub struct Greedy;

impl DecodeStrategy for Greedy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn decode(&self, scorer: &mut dyn StepScorer, config: &DecodeConfig) -> Result<DecodeOutcome> {
        config.validate()?;
        let (v, eos) = (scorer.vocab_size(), scorer.eos());
        let mut hyp = Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        };
        while hyp.tokens.len() < config.max_decode_len {
            let row = scorer.next_log_probs(std::slice::from_ref(&hyp.tokens))?.remove(0);
            check_row(&row, v)?;
            let best = (0..v).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            hyp.tokens.push(best);
            hyp.log_prob += row[best];
            if best == eos {
                hyp.finished = true;
                break;
            }
        }
        let unfinished = !hyp.finished;
        Ok(DecodeOutcome { best: hyp, unfinished })
    }
}

/// Keeps the `beam_size` highest-probability continuations each step;
/// candidates ending in the end id leave the beam as finished hypotheses.
/// Candidate ties break by token id, then by parent index.
pub struct BeamSearch;

impl DecodeStrategy for BeamSearch {
    fn name(&self) -> &'static str {
        "beam"
    }

    fn decode(&self, scorer: &mut dyn StepScorer, config: &DecodeConfig) -> Result<DecodeOutcome> {
        config.validate()?;
        let (v, eos) = (scorer.vocab_size(), scorer.eos());
        let mut alive = vec![Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        }];
        let mut finished = Vec::new();
        for _ in 0..config.max_decode_len {
            let prefixes: Vec<Vec<usize>> = alive.iter().map(|h| h.tokens.clone()).collect();
            let rows = scorer.next_log_probs(&prefixes)?;
            let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(alive.len() * v);
            for (hi, (h, row)) in alive.iter().zip(&rows).enumerate() {
                check_row(row, v)?;
                for (tok, &lp) in row.iter().enumerate() {
                    if lp > f64::NEG_INFINITY {
                        cands.push((h.log_prob + lp, tok, hi));
                    }
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            cands.truncate(config.beam_size);
            let mut next = Vec::with_capacity(cands.len());
            for (lp, tok, hi) in cands {
                let mut tokens = alive[hi].tokens.clone();
                tokens.push(tok);
                let hyp = Hypothesis {
                    tokens,
                    log_prob: lp,
                    finished: tok == eos,
                };
                if hyp.finished {
                    finished.push(hyp);
                } else {
                    next.push(hyp);
                }
            }
            alive = next;
            if alive.is_empty() {
                break;
            }
        }
        pick_final(finished, alive, config.alpha)
    }
}

/// Scores every sequence up to `max_decode_len`; exponential, meant for
/// checking the other strategies on tiny vocabularies.
pub struct Exhaustive;

impl DecodeStrategy for Exhaustive {
    fn name(&self) -> &'static str {
        "exhaustive"
    }

    fn decode(&self, scorer: &mut dyn StepScorer, config: &DecodeConfig) -> Result<DecodeOutcome> {
        config.validate()?;
        let (v, eos) = (scorer.vocab_size(), scorer.eos());
        let total = (v as f64).powi(config.max_decode_len as i32);
        if total > 1e6 {
            return Err(Error::config(format!(
                "exhaustive search over {v}^{} sequences is too large",
                config.max_decode_len
            )));
        }
        let mut level = vec![Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        }];
        let mut finished = Vec::new();
        for _ in 0..config.max_decode_len {
            if level.is_empty() {
                break;
            }
            let prefixes: Vec<Vec<usize>> = level.iter().map(|h| h.tokens.clone()).collect();
            let rows = scorer.next_log_probs(&prefixes)?;
            let mut next = Vec::new();
            for (h, row) in level.iter().zip(&rows) {
                check_row(row, v)?;
                for (tok, &lp) in row.iter().enumerate() {
                    if lp == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut tokens = h.tokens.clone();
                    tokens.push(tok);
                    let hyp = Hypothesis {
                        tokens,
                        log_prob: h.log_prob + lp,
                        finished: tok == eos,
                    };
                    if hyp.finished {
                        finished.push(hyp);
                    } else {
                        next.push(hyp);
                    }
                }
            }
            level = next;
        }
        pick_final(finished, level, config.alpha)
    }
}

/// Decoding strategies by name.
pub struct DecoderRegistry {
    strategies: BTreeMap<&'static str, Box<dyn DecodeStrategy>>,
}

impl Default for DecoderRegistry {
    /// `greedy`, `beam` and `exhaustive`.
    fn default() -> Self {
        let mut r = DecoderRegistry {
            strategies: BTreeMap::new(),
        };
        r.register(Box::new(Greedy));
        r.register(Box::new(BeamSearch));
        r.register(Box::new(Exhaustive));
        r
    }
}

impl DecoderRegistry {
    pub fn register(&mut self, strategy: Box<dyn DecodeStrategy>) {
        self.strategies.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> Result<&dyn DecodeStrategy> {
        self.strategies.get(name).map(Box::as_ref).ok_or_else(|| {
            Error::config(format!(
                "unknown decode strategy {name}; available: {}",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.strategies.keys().copied().collect()
    }
}
