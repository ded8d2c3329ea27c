use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token ↔ id bijection with the four reserved ids first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens followed by `tokens` in first-occurrence order.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            v.push(t);
        }
        for t in tokens {
            v.push(t.as_ref());
        }
        v
    }

    /// Reserved tokens followed by the distinct `tokens` in sorted order.
    pub fn sorted<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut all: Vec<String> = tokens.into_iter().map(|s| s.as_ref().to_string()).collect();
        all.sort();
        all.dedup();
        Self::new(all)
    }

    fn push(&mut self, t: &str) {
        if !self.index.contains_key(t) {
            self.index.insert(t.to_string(), self.tokens.len());
            self.tokens.push(t.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or the unknown id.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Words for `ids`, stopping at the first end-of-sequence id and
    /// skipping padding and begin markers.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    /// One token per line, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<&str> = text.lines().collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Format {
                path: path.into(),
                msg: "vocabulary must start with the reserved tokens".into(),
            });
        }
        let v = Self::new(&tokens[RESERVED.len()..]);
        if v.len() != tokens.len() {
            return Err(Error::Format {
                path: path.into(),
                msg: "duplicate vocabulary entries".into(),
            });
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::new(["b", "a", "b", "<s>"]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("</s>"), EOS);
        assert_eq!(v.id("b"), 4);
        assert_eq!(v.id("zzz"), UNK);
        assert_eq!(v.decode(&[1, 4, 5, 2, 4]), vec!["b", "a"]);
    }

    #[test]
    fn bijective() {
        let v = Vocabulary::sorted(["x", "c", "x", "m"]);
        for id in 0..v.len() {
            assert_eq!(v.id(v.token(id).unwrap()), id);
        }
    }
}
