use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Corpus-level n-gram statistics behind a BLEU-4 score.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuStats {
    /// Clipped matches for n = 1..4.
    pub matches: [usize; 4],
    /// Candidate n-grams for n = 1..4.
    pub totals: [usize; 4],
    pub candidate_len: usize,
    pub reference_len: usize,
    pub bleu: f64,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 in `[0, 100]`: clipped n-gram precisions combined by
/// geometric mean, times the brevity penalty. A zero match count for
/// n ≥ 2 is smoothed to `1 / (total + 1)`.
pub fn bleu<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<BleuStats> {
    if candidates.is_empty() {
        return Err(Error::data("BLEU over an empty candidate list"));
    }
    if candidates.len() != references.len() {
        return Err(Error::data(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut matches = [0; 4];
    let mut totals = [0; 4];
    for (c, r) in candidates.iter().zip(references) {
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, k) in ngram_counts(c, n) {
                matches[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    let candidate_len: usize = candidates.iter().map(Vec::len).sum();
    let reference_len: usize = references.iter().map(Vec::len).sum();
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 0..4 {
        let p = if n > 0 && matches[n] == 0 {
            1.0 / (totals[n] as f64 + 1.0)
        } else if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        if p == 0.0 {
            zero = true;
        } else {
            log_sum += p.ln();
        }
    }
    let bleu = if zero || candidate_len == 0 {
        0.0
    } else {
        let bp = if candidate_len > reference_len {
            1.0
        } else {
            (1.0 - reference_len as f64 / candidate_len as f64).exp()
        };
        100.0 * bp * (log_sum / 4.0).exp()
    };
    Ok(BleuStats {
        matches,
        totals,
        candidate_len,
        reference_len,
        bleu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_hundred() {
        let s = vec![vec!["a", "b", "c", "d", "e"], vec!["x", "y", "z", "w"]];
        assert!((bleu(&s, &s).unwrap().bleu - 100.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_is_zero() {
        let c = vec![vec!["a", "b", "c", "d"]];
        let r = vec![vec!["w", "x", "y", "z"]];
        assert_eq!(bleu(&c, &r).unwrap().bleu, 0.0);
        assert!(bleu::<&str>(&[], &[]).is_err());
    }
}
