//! A small clause grammar with a deterministic word-for-word target language
//! whose only reordering moves the verb to the end of the sentence.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TaggedPair, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PosTag {
    Det,
    Adj,
    Noun,
    Verb,
    Prep,
    Propn,
}

impl PosTag {
    pub const ALL: [PosTag; 6] = [
        PosTag::Det,
        PosTag::Adj,
        PosTag::Noun,
        PosTag::Verb,
        PosTag::Prep,
        PosTag::Propn,
    ];

    pub fn name(self) -> &'static str {
        ["DET", "ADJ", "NOUN", "VERB", "PREP", "PROPN"][self as usize]
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NerTag {
    O,
    Per,
    Loc,
}

impl NerTag {
    pub const ALL: [NerTag; 3] = [NerTag::O, NerTag::Per, NerTag::Loc];

    pub fn name(self) -> &'static str {
        ["O", "PER", "LOC"][self as usize]
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// The source-side word lists. Every word belongs to exactly one list.
#[derive(Clone, Debug)]
pub struct Lexicon {
    pub determiners: &'static [&'static str],
    pub adjectives: &'static [&'static str],
    pub nouns: &'static [&'static str],
    pub verbs: &'static [&'static str],
    pub prepositions: &'static [&'static str],
    pub persons: &'static [&'static str],
    pub locations: &'static [&'static str],
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon {
            determiners: &["the", "a", "this", "every"],
            adjectives: &[
                "red", "small", "old", "quick", "quiet", "bright", "heavy", "young", "green", "tall",
            ],
            nouns: &[
                "dog", "cat", "fire", "mountain", "river", "house", "bird", "tree", "stone", "child", "horse", "boat",
                "city", "song", "book", "lamp",
            ],
            verbs: &[
                "sees", "likes", "finds", "takes", "moves", "hears", "builds", "follows", "carries", "paints",
                "guards", "calls",
            ],
            prepositions: &["near", "under", "behind", "with"],
            persons: &["anna", "boris", "chen", "dara"],
            locations: &["paris", "oslo", "lima", "kyoto"],
        }
    }
}

impl Lexicon {
    /// POS and NER tags of a source word, or `None` if it is not in the
    /// lexicon.
    pub fn tags(&self, word: &str) -> Option<(PosTag, NerTag)> {
        let has = |list: &[&str]| list.contains(&word);
        if has(self.determiners) {
            Some((PosTag::Det, NerTag::O))
        } else if has(self.adjectives) {
            Some((PosTag::Adj, NerTag::O))
        } else if has(self.nouns) {
            Some((PosTag::Noun, NerTag::O))
        } else if has(self.verbs) {
            Some((PosTag::Verb, NerTag::O))
        } else if has(self.prepositions) {
            Some((PosTag::Prep, NerTag::O))
        } else if has(self.persons) {
            Some((PosTag::Propn, NerTag::Per))
        } else if has(self.locations) {
            Some((PosTag::Propn, NerTag::Loc))
        } else {
            None
        }
    }

    /// Target-language form of a source word: reversed spelling plus `o`.
    pub fn target_word(word: &str) -> String {
        let mut w: String = word.chars().rev().collect();
        w.push('o');
        w
    }

    fn noun_phrase(&self, rng: &mut ChaCha8Rng, out: &mut Vec<&'static str>) {
        let pick = |rng: &mut ChaCha8Rng, list: &'static [&'static str]| *list.choose(rng).unwrap();
        match rng.gen_range(0..3) {
            0 => {
                let names = if rng.gen_bool(0.5) {
                    self.persons
                } else {
                    self.locations
                };
                out.push(pick(rng, names));
            }
            1 => {
                out.push(pick(rng, self.determiners));
                out.push(pick(rng, self.nouns));
            }
            _ => {
                out.push(pick(rng, self.determiners));
                out.push(pick(rng, self.adjectives));
                out.push(pick(rng, self.nouns));
            }
        }
    }

    /// `NP VERB NP [PREP NP]`.
    fn sentence(&self, rng: &mut ChaCha8Rng) -> Vec<&'static str> {
        let mut s = Vec::with_capacity(11);
        self.noun_phrase(rng, &mut s);
        s.push(*self.verbs.choose(rng).unwrap());
        self.noun_phrase(rng, &mut s);
        if rng.gen_bool(0.5) {
            s.push(*self.prepositions.choose(rng).unwrap());
            self.noun_phrase(rng, &mut s);
        }
        s
    }

    /// Maps every word and moves the verb to the end.
    pub fn translate(&self, src: &[&str]) -> Vec<String> {
        let (verbs, rest): (Vec<&str>, Vec<&str>) = src
            .iter()
            .partition(|w| matches!(self.tags(w), Some((PosTag::Verb, _))));
        rest.into_iter().chain(verbs).map(Self::target_word).collect()
    }
}

/// A generated pair in surface form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextPair {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub pos: Vec<PosTag>,
    pub ner: Vec<NerTag>,
}

impl TextPair {
    /// Encodes with the given vocabularies; tag ids are enum positions.
    pub fn to_tagged(&self, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> TaggedPair {
        TaggedPair {
            src: src_vocab.encode(&self.src),
            tgt: tgt_vocab.encode(&self.tgt),
            pos_tags: self.pos.iter().map(|&t| t as usize).collect(),
            ner_tags: self.ner.iter().map(|&t| t as usize).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedCorpus {
    pub text: Vec<TextPair>,
    pub pairs: Vec<TaggedPair>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

/// `n_pairs` sentences of at most `max_len` source tokens, drawn from a
/// stream seeded by `grammar_seed`. Vocabularies are the sorted distinct
/// words of the generated text.
pub fn generate_corpus(grammar_seed: u64, n_pairs: usize, max_len: usize) -> Result<GeneratedCorpus> {
    if n_pairs == 0 {
        return Err(Error::config("n_pairs must be at least 1"));
    }
    if max_len < 3 {
        return Err(Error::config(format!(
            "max_len {max_len} is shorter than the shortest sentence (3 tokens)"
        )));
    }
    let lex = Lexicon::default();
    let mut rng = ChaCha8Rng::seed_from_u64(grammar_seed);
    let mut text = Vec::with_capacity(n_pairs);
    while text.len() < n_pairs {
        let src = lex.sentence(&mut rng);
        if src.len() > max_len {
            continue;
        }
        let (pos, ner) = src.iter().map(|w| lex.tags(w).unwrap()).unzip();
        text.push(TextPair {
            tgt: lex.translate(&src),
            src: src.iter().map(|w| w.to_string()).collect(),
            pos,
            ner,
        });
    }
    let src_vocab = Vocabulary::sorted(text.iter().flat_map(|p| p.src.iter()));
    let tgt_vocab = Vocabulary::sorted(text.iter().flat_map(|p| p.tgt.iter()));
    let pairs = text.iter().map(|p| p.to_tagged(&src_vocab, &tgt_vocab)).collect();
    Ok(GeneratedCorpus {
        text,
        pairs,
        src_vocab,
        tgt_vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_lists_are_disjoint_and_sized() {
        let lex = Lexicon::default();
        let all: Vec<&str> = [
            lex.determiners,
            lex.adjectives,
            lex.nouns,
            lex.verbs,
            lex.prepositions,
            lex.persons,
            lex.locations,
        ]
        .concat();
        let mut uniq = all.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), all.len());
        assert_eq!(all.len() + 4, 58);
    }

    #[test]
    fn verb_goes_last() {
        let lex = Lexicon::default();
        assert_eq!(
            lex.translate(&["anna", "sees", "a", "dog"]),
            vec!["annao", "ao", "godo", "seeso"]
        );
    }

    #[test]
    fn respects_max_len() {
        let c = generate_corpus(3, 200, 5).unwrap();
        assert!(c.text.iter().all(|p| p.src.len() <= 5 && p.src.len() >= 3));
        assert!(generate_corpus(3, 0, 5).is_err());
    }
}
