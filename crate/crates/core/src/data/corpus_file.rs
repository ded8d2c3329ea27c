//! Line format: `src ||| tgt ||| pos ||| ner`, tokens separated by spaces.

use std::path::Path;

use super::{NerTag, PosTag, TextPair};
use crate::error::{Error, Result};

pub const FIELD_SEPARATOR: &str = " ||| ";

pub fn render_corpus(pairs: &[TextPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let pos: Vec<&str> = p.pos.iter().map(|t| t.name()).collect();
        let ner: Vec<&str> = p.ner.iter().map(|t| t.name()).collect();
        let fields = [p.src.join(" "), p.tgt.join(" "), pos.join(" "), ner.join(" ")];
        out.push_str(&fields.join(FIELD_SEPARATOR));
        out.push('\n');
    }
    out
}

/// Parses corpus text. Fields may also be separated by tabs; blank lines
/// are skipped. `source` names the input in error messages.
pub fn parse_corpus(text: &str, source: &str) -> Result<Vec<TextPair>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Error::data(format!("{source}:{}: {msg}", n + 1));
        let fields: Vec<&str> = if line.contains("|||") {
            line.split("|||").map(str::trim).collect()
        } else {
            line.split('\t').map(str::trim).collect()
        };
        if fields.len() != 4 {
            return Err(at(format!("expected 4 fields, found {}", fields.len())));
        }
        let words = |f: &str| -> Vec<String> { f.split_whitespace().map(String::from).collect() };
        let pos = fields[2]
            .split_whitespace()
            .map(|t| PosTag::parse(t).ok_or_else(|| at(format!("unknown POS tag {t}"))))
            .collect::<Result<Vec<_>>>()?;
        let ner = fields[3]
            .split_whitespace()
            .map(|t| NerTag::parse(t).ok_or_else(|| at(format!("unknown NER tag {t}"))))
            .collect::<Result<Vec<_>>>()?;
        let src = words(fields[0]);
        if src.is_empty() {
            return Err(at("empty source".into()));
        }
        if pos.len() != src.len() || ner.len() != src.len() {
            return Err(at(format!(
                "{} source tokens with {} POS and {} NER tags",
                src.len(),
                pos.len(),
                ner.len()
            )));
        }
        pairs.push(TextPair {
            src,
            tgt: words(fields[1]),
            pos,
            ner,
        });
    }
    Ok(pairs)
}

pub fn write_corpus(path: &Path, pairs: &[TextPair]) -> Result<()> {
    std::fs::write(path, render_corpus(pairs)).map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<TextPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_corpus;

    #[test]
    fn render_parse_round_trip() {
        let c = generate_corpus(11, 25, 11).unwrap();
        let text = render_corpus(&c.text);
        assert_eq!(text.lines().count(), 25);
        assert_eq!(parse_corpus(&text, "mem").unwrap(), c.text);
        let tabbed = text.replace(FIELD_SEPARATOR, "\t");
        assert_eq!(parse_corpus(&tabbed, "mem").unwrap(), c.text);
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_corpus("a ||| b ||| DET ||| O\nx ||| y ||| DET\n", "f").unwrap_err();
        assert!(err.to_string().contains("f:2"));
    }
}
