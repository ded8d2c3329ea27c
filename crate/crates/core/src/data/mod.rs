//! Synthetic tagged parallel corpora, vocabularies, byte-pair encoding and
//! equal-length batching.

mod batch;
mod bpe;
mod corpus_file;
mod grammar;
mod tokenizer;
mod vocab;

pub use batch::{make_batches, pair_tokens};
pub use bpe::{bpe_decode, bpe_encode, bpe_train, BpeModel, WORD_MARKER};
pub use corpus_file::{parse_corpus, read_corpus, render_corpus, write_corpus, FIELD_SEPARATOR};
pub use grammar::{generate_corpus, GeneratedCorpus, Lexicon, NerTag, PosTag, TextPair};
pub use tokenizer::Tokenizer;
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

/// One training example: source and target ids plus a POS and an NER tag
/// per source token.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TaggedPair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
    pub pos_tags: Vec<usize>,
    pub ner_tags: Vec<usize>,
}

impl TaggedPair {
    /// Checks tag alignment and that every id is inside its inventory.
    pub fn validate(&self, vocab_src: usize, vocab_tgt: usize, n_pos: usize, n_ner: usize) -> crate::Result<()> {
        use crate::Error;
        if self.pos_tags.len() != self.src.len() || self.ner_tags.len() != self.src.len() {
            return Err(Error::data(format!(
                "{} source tokens with {} POS and {} NER tags",
                self.src.len(),
                self.pos_tags.len(),
                self.ner_tags.len()
            )));
        }
        let check = |ids: &[usize], bound: usize, what: &str| match ids.iter().position(|&i| i >= bound) {
            Some(p) => Err(Error::data(format!("{what} id {} at position {p} ≥ {bound}", ids[p]))),
            None => Ok(()),
        };
        check(&self.src, vocab_src, "source")?;
        check(&self.tgt, vocab_tgt, "target")?;
        check(&self.pos_tags, n_pos, "POS")?;
        check(&self.ner_tags, n_ner, "NER")
    }
}
