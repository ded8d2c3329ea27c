use std::fmt::Write as _;
use std::path::Path;

use super::{bpe_decode, bpe_train, BpeModel, TaggedPair, TextPair, Vocabulary, RESERVED};
use crate::error::{Error, Result};

/// Whole-word or byte-pair tokenisation of one language side.
#[derive(Clone, Debug, PartialEq)]
pub enum Tokenizer {
    Words(Vocabulary),
    Bpe { model: BpeModel, vocab: Vocabulary },
}

impl Tokenizer {
    /// Whole words when `merges == 0`, otherwise byte-pair symbols learned
    /// from `sentences`.
    pub fn train(sentences: &[&[String]], merges: i64) -> Result<Self> {
        if merges == 0 {
            return Ok(Tokenizer::Words(Vocabulary::sorted(
                sentences.iter().flat_map(|s| s.iter()),
            )));
        }
        let text: Vec<String> = sentences.iter().map(|s| s.join(" ")).collect();
        let model = bpe_train(&text.join("\n"), merges)?;
        let vocab = model.vocabulary();
        Ok(Tokenizer::Bpe { model, vocab })
    }

    pub fn vocab(&self) -> &Vocabulary {
        match self {
            Tokenizer::Words(v) | Tokenizer::Bpe { vocab: v, .. } => v,
        }
    }

    /// Token ids plus, for each id, the index of the word it came from.
    pub fn encode(&self, words: &[String]) -> (Vec<usize>, Vec<usize>) {
        match self {
            Tokenizer::Words(v) => (v.encode(words), (0..words.len()).collect()),
            Tokenizer::Bpe { model, vocab } => {
                let mut ids = Vec::new();
                let mut origin = Vec::new();
                for (i, w) in words.iter().enumerate() {
                    let syms = model.segment(w);
                    origin.extend(std::iter::repeat_n(i, syms.len()));
                    ids.extend(vocab.encode(&syms));
                }
                (ids, origin)
            }
        }
    }

    /// Space-separated words for `ids`, stopping at the end id.
    pub fn decode(&self, ids: &[usize]) -> String {
        let end = ids.iter().position(|&i| i == super::EOS).unwrap_or(ids.len());
        match self {
            Tokenizer::Words(v) => v.decode(&ids[..end]).join(" "),
            Tokenizer::Bpe { vocab, .. } => bpe_decode(&ids[..end], vocab),
        }
    }

    /// Encodes a surface pair; each subword inherits its word's tags.
    pub fn tag_pair(src: &Tokenizer, tgt: &Tokenizer, pair: &TextPair) -> TaggedPair {
        let (src_ids, origin) = src.encode(&pair.src);
        TaggedPair {
            src: src_ids,
            tgt: tgt.encode(&pair.tgt).0,
            pos_tags: origin.iter().map(|&i| pair.pos[i] as usize).collect(),
            ner_tags: origin.iter().map(|&i| pair.ner[i] as usize).collect(),
        }
    }

    /// Text form: a `words` or `bpe` header, `merge L R` lines, then one
    /// `token T` line per vocabulary entry in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        match self {
            Tokenizer::Words(_) => s.push_str("words\n"),
            Tokenizer::Bpe { model, .. } => {
                s.push_str("bpe\n");
                for (l, r) in &model.merges {
                    let _ = writeln!(s, "merge {l} {r}");
                }
            }
        }
        for t in self.vocab().tokens() {
            let _ = writeln!(s, "token {t}");
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::Format { path: path.into(), msg };
        let mut lines = text.lines();
        let kind = lines.next().unwrap_or_default();
        let mut merges = Vec::new();
        let mut tokens = Vec::new();
        for (n, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split(' ').collect();
            match parts.as_slice() {
                ["merge", l, r] => merges.push((l.to_string(), r.to_string())),
                ["token", t] => tokens.push(t.to_string()),
                _ => return Err(bad(format!("line {}: unrecognised entry", n + 2))),
            }
        }
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(bad("vocabulary must start with the reserved tokens".into()));
        }
        let vocab = Vocabulary::new(&tokens[RESERVED.len()..]);
        if vocab.len() != tokens.len() {
            return Err(bad("duplicate vocabulary entries".into()));
        }
        match kind {
            "words" if merges.is_empty() => Ok(Tokenizer::Words(vocab)),
            "bpe" => Ok(Tokenizer::Bpe {
                model: BpeModel {
                    alphabet: Vec::new(),
                    merges,
                },
                vocab,
            }),
            _ => Err(bad(format!("unknown tokenizer kind {kind:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_corpus;

    #[test]
    fn bpe_tags_follow_words() {
        let c = generate_corpus(5, 50, 11).unwrap();
        let srcs: Vec<&[String]> = c.text.iter().map(|p| p.src.as_slice()).collect();
        let tok = Tokenizer::train(&srcs, 20).unwrap();
        let p = &c.text[0];
        let tagged = Tokenizer::tag_pair(&tok, &tok, p);
        assert_eq!(tagged.pos_tags.len(), tagged.src.len());
        assert_eq!(tok.decode(&tagged.src), p.src.join(" "));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = std::env::temp_dir().join(format!("ctxf-tok-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let words = vec!["ab".to_string(), "abc".to_string()];
        for merges in [0, 3] {
            let tok = Tokenizer::train(&[&words], merges).unwrap();
            let path = dir.join("t.tok");
            tok.save(&path).unwrap();
            let back = Tokenizer::load(&path).unwrap();
            assert_eq!(back.vocab(), tok.vocab());
            assert_eq!(back.encode(&words), tok.encode(&words));
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
