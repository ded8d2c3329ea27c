use std::path::Path;

use ctxformer::config::RunConfig;
use ctxformer::data::Tokenizer;
use ctxformer::infer::{translate, DecodeConfig, DecodeStrategy, DecoderRegistry};
use ctxformer::model::Model;
use ctxformer::{Error, Result};

use crate::RunDir;

/// Decodes each line; empty lines stay empty. Lines are split across up to
/// `threads` workers, and the output order matches the input.
pub fn translate_lines(
    model: &Model,
    src: &Tokenizer,
    tgt: &Tokenizer,
    strategy: &dyn DecodeStrategy,
    config: &DecodeConfig,
    lines: &[String],
    threads: usize,
) -> Result<Vec<String>> {
    let one = |line: &String| -> Result<String> {
        let words: Vec<String> = line.split_whitespace().map(String::from).collect();
        if words.is_empty() {
            return Ok(String::new());
        }
        let (ids, _) = src.encode(&words);
        let out = translate(model, &ids, strategy, config)?;
        if out.unfinished {
            eprintln!(
                "warning: no end of sentence within {} tokens for: {line}",
                config.max_decode_len
            );
        }
        Ok(tgt.decode(out.best.output()))
    };
    if lines.is_empty() {
        return Ok(Vec::new());
    }
    let chunk = lines.len().div_ceil(threads.max(1));
    std::thread::scope(|s| {
        let handles: Vec<_> = lines
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(one).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(lines.len());
        for h in handles {
            out.extend(h.join().map_err(|_| Error::numerical("decoder thread panicked"))??);
        }
        Ok(out)
    })
}

pub fn cmd_translate(cfg: &RunConfig, input: &Path, checkpoint: Option<&Path>, threads: usize) -> Result<Vec<String>> {
    cfg.validate()?;
    let registry = DecoderRegistry::default();
    let strategy = registry.get(&cfg.decode_strategy)?;
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let lines: Vec<String> = text.lines().map(String::from).collect();
    let (model, src, tgt) = RunDir::new(&cfg.out_dir).load_model(cfg, checkpoint)?;
    translate_lines(&model, &src, &tgt, strategy, &cfg.decode, &lines, threads)
}
