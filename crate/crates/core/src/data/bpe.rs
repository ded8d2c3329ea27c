//! Byte-pair encoding over characters, with a marker symbol standing for the
//! space in front of every word.

use std::collections::{BTreeMap, BTreeSet};

use super::{Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};

pub const WORD_MARKER: char = '▁';

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    /// Sorted base symbols seen in training, including the word marker.
    pub alphabet: Vec<String>,
    /// Merge rules in the order they were learned.
    pub merges: Vec<(String, String)>,
}

fn split_word(word: &str) -> Vec<String> {
    std::iter::once(WORD_MARKER)
        .chain(word.chars())
        .map(String::from)
        .collect()
}

fn apply_merge(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let r = symbols.remove(i + 1);
            symbols[i].push_str(&r);
        }
        i += 1;
    }
}

/// Learns up to `n_merges` rules, each time merging the most frequent
/// adjacent pair; equal counts go to the lexicographically smallest pair.
/// Stops early once no pair is left.
pub fn bpe_train(text: &str, n_merges: i64) -> Result<BpeModel> {
    if n_merges < 0 {
        return Err(Error::config(format!("n_merges must be ≥ 0, got {n_merges}")));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in text.split_whitespace() {
        *counts.entry(w).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(Error::data("byte-pair training needs a non-empty corpus"));
    }
    let mut words: Vec<(Vec<String>, usize)> = counts.iter().map(|(w, &c)| (split_word(w), c)).collect();
    let alphabet: BTreeSet<String> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    let mut merges = Vec::new();
    for _ in 0..n_merges {
        let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *pairs.entry((&w[0], &w[1])).or_default() += c;
            }
        }
        // Ascending key order, so the first maximum is the smallest pair.
        let best = pairs
            .iter()
            .fold(None, |best: Option<(&(&str, &str), usize)>, (k, &c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((k, c)),
            });
        let Some(((l, r), _)) = best else { break };
        let (l, r) = (l.to_string(), r.to_string());
        for (syms, _) in &mut words {
            apply_merge(syms, &l, &r);
        }
        merges.push((l, r));
    }
    Ok(BpeModel {
        alphabet: alphabet.into_iter().collect(),
        merges,
    })
}

impl BpeModel {
    /// Symbols of `text` after applying every merge in order.
    pub fn segment(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for w in text.split_whitespace() {
            let mut syms = split_word(w);
            for (l, r) in &self.merges {
                apply_merge(&mut syms, l, r);
            }
            out.extend(syms);
        }
        out
    }

    /// Reserved ids, then the alphabet, then merged symbols in merge order.
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::new(
            self.alphabet
                .iter()
                .cloned()
                .chain(self.merges.iter().map(|(l, r)| format!("{l}{r}"))),
        )
    }
}

/// Symbol ids of `text`; symbols missing from `vocab` become the unknown id.
pub fn bpe_encode(text: &str, model: &BpeModel, vocab: &Vocabulary) -> Vec<usize> {
    vocab.encode(&model.segment(text))
}

/// Inverse of [`bpe_encode`] for text over the training alphabet with single
/// spaces between words.
pub fn bpe_decode(ids: &[usize], vocab: &Vocabulary) -> String {
    let joined: String = ids
        .iter()
        .filter(|&&i| i != PAD && i != BOS && i != EOS)
        .map(|&i| vocab.token(i).unwrap_or("<unk>"))
        .collect();
    let spaced = joined.replace(WORD_MARKER, " ");
    spaced.strip_prefix(' ').unwrap_or(&spaced).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_merge() {
        let m = bpe_train("aaaa", 1).unwrap();
        assert_eq!(m.merges, vec![("a".to_string(), "a".to_string())]);
        assert_eq!(m.segment("aaaa"), vec!["▁", "aa", "aa"]);
    }

    #[test]
    fn zero_merges_is_characters() {
        let m = bpe_train("ab ba", 0).unwrap();
        assert_eq!(m.segment("ab"), vec!["▁", "a", "b"]);
        assert!(bpe_train("ab", -1).is_err());
        assert!(bpe_train("  ", 3).is_err());
    }

    #[test]
    fn round_trip_and_unknown() {
        let text = "low lower lowest newer wider";
        let m = bpe_train(text, 8).unwrap();
        let v = m.vocabulary();
        assert_eq!(bpe_decode(&bpe_encode(text, &m, &v), &v), text);
        assert!(bpe_encode("", &m, &v).is_empty());
        assert!(bpe_encode("lowz", &m, &v).contains(&super::super::UNK));
    }
}
