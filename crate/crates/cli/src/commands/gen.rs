use std::fmt;
use std::path::{Path, PathBuf};

use ctxformer::config::RunConfig;
use ctxformer::data::{generate_corpus, write_corpus, TextPair};
use ctxformer::{Error, Result};

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

/// Pair counts per split: rounded shares for train and valid, the rest
/// for test.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let train = ((n as f64) * ratios[0]).round() as usize;
    let valid = (((n as f64) * ratios[1]).round() as usize).min(n - train.min(n));
    let train = train.min(n);
    [train, valid, n - train - valid]
}

#[derive(Clone, Debug)]
pub struct GenSummary {
    pub files: Vec<(PathBuf, usize)>,
}

impl fmt::Display for GenSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (path, n)) in self.files.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}\t{n}", path.display())?;
        }
        Ok(())
    }
}

fn lines(pairs: &[TextPair], side: fn(&TextPair) -> &[String]) -> String {
    pairs.iter().map(|p| side(p).join(" ") + "\n").collect()
}

/// Writes `{train,valid,test}.txt` in the corpus format plus plain
/// `{split}.src` / `{split}.ref` sentence files into `dir`.
pub fn cmd_gen(cfg: &RunConfig, dir: &Path) -> Result<GenSummary> {
    cfg.validate()?;
    let d = &cfg.data;
    let corpus = generate_corpus(d.grammar_seed, d.n_pairs, d.max_sentence_len)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sizes = split_sizes(d.n_pairs, d.splits);
    let mut start = 0;
    let mut files = Vec::new();
    for (name, size) in SPLITS.iter().zip(sizes) {
        let part = &corpus.text[start..start + size];
        start += size;
        let path = dir.join(format!("{name}.txt"));
        write_corpus(&path, part)?;
        for (ext, side) in [
            ("src", (|p: &TextPair| p.src.as_slice()) as fn(&TextPair) -> &[String]),
            ("ref", |p| p.tgt.as_slice()),
        ] {
            let p = dir.join(format!("{name}.{ext}"));
            std::fs::write(&p, lines(part, side)).map_err(|e| Error::io(&p, e))?;
        }
        files.push((path, size));
    }
    Ok(GenSummary { files })
}
