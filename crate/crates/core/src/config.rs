//! Run configuration: a flat `key = value` file with `[section]` headers,
//! layered over a named preset.
//!
//! ```text
//! preset = toy
//!
//! [model]
//! d_model = 64
//! kernel_sizes = 3, 5, 7
//!
//! [train]
//! total_steps = 2000
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::infer::DecodeConfig;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Toy,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "toy" => Ok(Preset::Toy),
            _ => Err(Error::config(format!("unknown preset {s}; expected paper or toy"))),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Toy => "toy",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub n_pairs: usize,
    /// Longest generated source sentence.
    pub max_sentence_len: usize,
    pub grammar_seed: u64,
    /// Train, valid and test fractions; they must sum to 1.
    pub splits: [f64; 3],
    /// Byte-pair merges; 0 keeps whole words as tokens.
    pub bpe_merges: i64,
    pub corpus_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    /// Name in the decoder registry.
    pub decode_strategy: String,
    pub data: DataConfig,
    /// Checkpoints, vocabularies and the metrics log go here.
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Toy => RunConfig {
                preset,
                model: ModelConfig {
                    d_model: 64,
                    h: 8,
                    n_blocks: 3,
                    kernel_sizes: vec![3, 5, 7],
                    dilations: vec![1, 1, 1],
                    dropout: 0.1,
                    residual_dropout: 0.0,
                    embed_dropout: 0.0,
                    dropconnect: 0.0,
                    max_len: 16,
                    ..ModelConfig::default()
                },
                train: TrainConfig {
                    warmup_steps: 400,
                    total_steps: 2000,
                    accum_steps: 1,
                    checkpoint_every: 500,
                    keep_last: 10,
                    max_tokens: 500,
                    ..TrainConfig::default()
                },
                decode: DecodeConfig {
                    beam_size: 5,
                    alpha: 0.5,
                    max_decode_len: 16,
                },
                decode_strategy: "beam".into(),
                data: DataConfig {
                    n_pairs: 10_000,
                    max_sentence_len: 11,
                    grammar_seed: 1,
                    splits: [0.8, 0.1, 0.1],
                    bpe_merges: 0,
                    corpus_dir: "corpus".into(),
                },
                out_dir: "run".into(),
            },
            Preset::Paper => RunConfig {
                preset,
                model: ModelConfig {
                    d_model: 1024,
                    h: 16,
                    n_blocks: 5,
                    kernel_sizes: vec![3, 5, 7, 11, 15],
                    dilations: vec![1; 5],
                    dropout: 0.25,
                    residual_dropout: 0.10,
                    embed_dropout: 0.10,
                    dropconnect: 0.10,
                    max_len: 256,
                    ..ModelConfig::default()
                },
                train: TrainConfig {
                    warmup_steps: 4000,
                    total_steps: 320_000,
                    accum_steps: 10,
                    checkpoint_every: 500,
                    keep_last: 10,
                    max_tokens: 4096,
                    ..TrainConfig::default()
                },
                decode: DecodeConfig {
                    beam_size: 5,
                    alpha: 0.5,
                    max_decode_len: 256,
                },
                decode_strategy: "beam".into(),
                data: DataConfig {
                    n_pairs: 100_000,
                    max_sentence_len: 11,
                    grammar_seed: 1,
                    splits: [0.8, 0.1, 0.1],
                    bpe_merges: 0,
                    corpus_dir: "corpus".into(),
                },
                out_dir: "run".into(),
            },
        }
    }

    /// Parses `text` over the preset it names (or `preset_override`, or
    /// `toy`).
    pub fn parse(text: &str, preset_override: Option<Preset>) -> Result<Self> {
        let entries = parse_entries(text)?;
        let named = entries
            .iter()
            .find(|e| e.key == "preset")
            .map(|e| e.value.parse::<Preset>().map_err(|err| e.error(&err.to_string())))
            .transpose()?;
        let mut cfg = RunConfig::preset(preset_override.or(named).unwrap_or(Preset::Toy));
        for e in &entries {
            if e.key != "preset" {
                cfg.set(&e.key, &e.value).map_err(|err| e.error(&err.to_string()))?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, preset_override: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, preset_override).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Sets the seed for parameter initialisation, training and corpus
    /// generation at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.model.init_seed = seed;
        self.data.grammar_seed = seed;
    }

    /// Assigns one `section.key`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let d = &mut self.decode;
        let data = &mut self.data;
        match key {
            "model.d_model" => m.d_model = num(value)?,
            "model.h" => m.h = num(value)?,
            "model.n_blocks" => m.n_blocks = num(value)?,
            "model.kernel_sizes" => m.kernel_sizes = list(value)?,
            "model.dilations" => m.dilations = list(value)?,
            "model.dropout" => m.dropout = num(value)?,
            "model.residual_dropout" => m.residual_dropout = num(value)?,
            "model.embed_dropout" => m.embed_dropout = num(value)?,
            "model.dropconnect" => m.dropconnect = num(value)?,
            "model.max_len" => m.max_len = num(value)?,
            "model.ffn_mult" => m.ffn_mult = num(value)?,
            "model.hybrid_standard_encoders" => m.hybrid_standard_encoders = flag(value)?,
            "model.cross_conv" => m.cross_conv = on_off(value)?,
            "model.aux_heads" => m.aux_heads = flag(value)?,
            "model.layer_norm_eps" => m.layer_norm_eps = num(value)?,
            "model.init_seed" => m.init_seed = num(value)?,
            "train.warmup_steps" => t.warmup_steps = num(value)?,
            "train.total_steps" => t.total_steps = num(value)?,
            "train.accum_steps" => t.accum_steps = num(value)?,
            "train.beta1" => t.betas.0 = num(value)?,
            "train.beta2" => t.betas.1 = num(value)?,
            "train.adam_eps" => t.adam_eps = num(value)?,
            "train.lr_scale" => t.lr_scale = num(value)?,
            "train.lambda_pos" => t.lambda_pos = num(value)?,
            "train.lambda_ner" => t.lambda_ner = num(value)?,
            "train.seed" => t.seed = num(value)?,
            "train.checkpoint_every" => t.checkpoint_every = num(value)?,
            "train.keep_last" => t.keep_last = num(value)?,
            "train.max_tokens" => t.max_tokens = num(value)?,
            "decode.strategy" => self.decode_strategy = value.to_string(),
            "decode.beam_size" => d.beam_size = num(value)?,
            "decode.alpha" => d.alpha = num(value)?,
            "decode.max_decode_len" => d.max_decode_len = num(value)?,
            "data.n_pairs" => data.n_pairs = num(value)?,
            "data.max_sentence_len" => data.max_sentence_len = num(value)?,
            "data.grammar_seed" => data.grammar_seed = num(value)?,
            "data.train_ratio" => data.splits[0] = num(value)?,
            "data.valid_ratio" => data.splits[1] = num(value)?,
            "data.test_ratio" => data.splits[2] = num(value)?,
            "data.bpe_merges" => data.bpe_merges = num(value)?,
            "data.corpus_dir" => data.corpus_dir = value.into(),
            "paths.out_dir" => self.out_dir = value.into(),
            _ => return Err(Error::config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Checks every constituent config and the cross-field constraints.
    /// Vocabulary sizes come from the corpus and are checked when the model
    /// is built.
    pub fn validate(&self) -> Result<()> {
        let mut m = self.model.clone();
        m.vocab_src = m.vocab_src.max(5);
        m.vocab_tgt = m.vocab_tgt.max(5);
        m.validate()?;
        self.train.validate()?;
        self.decode.validate()?;
        crate::infer::DecoderRegistry::default().get(&self.decode_strategy)?;
        let data = &self.data;
        if data.n_pairs == 0 {
            return Err(Error::config("data.n_pairs must be at least 1"));
        }
        if data.splits.iter().any(|&r| !(0.0..=1.0).contains(&r))
            || (data.splits.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config(format!(
                "split ratios {:?} must lie in [0, 1] and sum to 1",
                data.splits
            )));
        }
        if data.bpe_merges < 0 {
            return Err(Error::config("data.bpe_merges must be ≥ 0"));
        }
        if data.max_sentence_len > self.model.max_len {
            return Err(Error::config(format!(
                "data.max_sentence_len {} exceeds model.max_len {}",
                data.max_sentence_len, self.model.max_len
            )));
        }
        if self.decode.max_decode_len > self.model.max_len {
            return Err(Error::config(format!(
                "decode.max_decode_len {} exceeds model.max_len {}",
                self.decode.max_decode_len, self.model.max_len
            )));
        }
        if self.train.total_steps < self.train.accum_steps {
            return Err(Error::config(
                "train.total_steps is smaller than one accumulation window",
            ));
        }
        Ok(())
    }

    /// The full effective configuration in the file format.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let d = &self.decode;
        let data = &self.data;
        let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "preset = {}\n", self.preset.name());
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "d_model = {}\nh = {}\nn_blocks = {}", m.d_model, m.h, m.n_blocks);
        let _ = writeln!(
            s,
            "kernel_sizes = {}\ndilations = {}",
            join(&m.kernel_sizes),
            join(&m.dilations)
        );
        let _ = writeln!(
            s,
            "dropout = {}\nresidual_dropout = {}\nembed_dropout = {}\ndropconnect = {}",
            m.dropout, m.residual_dropout, m.embed_dropout, m.dropconnect
        );
        let _ = writeln!(s, "max_len = {}\nffn_mult = {}", m.max_len, m.ffn_mult);
        let _ = writeln!(
            s,
            "hybrid_standard_encoders = {}\ncross_conv = {}\naux_heads = {}",
            m.hybrid_standard_encoders,
            if m.cross_conv { "on" } else { "off" },
            m.aux_heads
        );
        let _ = writeln!(
            s,
            "layer_norm_eps = {}\ninit_seed = {}\n",
            m.layer_norm_eps, m.init_seed
        );
        let _ = writeln!(s, "[train]");
        let _ = writeln!(
            s,
            "warmup_steps = {}\ntotal_steps = {}\naccum_steps = {}",
            t.warmup_steps, t.total_steps, t.accum_steps
        );
        let _ = writeln!(
            s,
            "beta1 = {}\nbeta2 = {}\nadam_eps = {}\nlr_scale = {}",
            t.betas.0, t.betas.1, t.adam_eps, t.lr_scale
        );
        let _ = writeln!(
            s,
            "lambda_pos = {}\nlambda_ner = {}\nseed = {}",
            t.lambda_pos, t.lambda_ner, t.seed
        );
        let _ = writeln!(
            s,
            "checkpoint_every = {}\nkeep_last = {}\nmax_tokens = {}\n",
            t.checkpoint_every, t.keep_last, t.max_tokens
        );
        let _ = writeln!(s, "[decode]");
        let _ = writeln!(
            s,
            "strategy = {}\nbeam_size = {}\nalpha = {}\nmax_decode_len = {}\n",
            self.decode_strategy, d.beam_size, d.alpha, d.max_decode_len
        );
        let _ = writeln!(s, "[data]");
        let _ = writeln!(
            s,
            "n_pairs = {}\nmax_sentence_len = {}\ngrammar_seed = {}",
            data.n_pairs, data.max_sentence_len, data.grammar_seed
        );
        let _ = writeln!(
            s,
            "train_ratio = {}\nvalid_ratio = {}\ntest_ratio = {}",
            data.splits[0], data.splits[1], data.splits[2]
        );
        let _ = writeln!(
            s,
            "bpe_merges = {}\ncorpus_dir = {}\n",
            data.bpe_merges,
            data.corpus_dir.display()
        );
        let _ = writeln!(s, "[paths]\nout_dir = {}", self.out_dir.display());
        s
    }
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

impl Entry {
    fn error(&self, msg: &str) -> Error {
        Error::config(format!("line {}: {msg}", self.line))
    }
}

fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key = value", i + 1)))?;
        let k = k.trim();
        let key = if section.is_empty() {
            k.to_string()
        } else {
            format!("{section}.{k}")
        };
        out.push(Entry {
            line: i + 1,
            key,
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

fn num<T: FromStr>(v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("cannot parse {v:?} as a number")))
}

fn list(v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| num(p.trim())).collect()
}

fn flag(v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(format!("expected true or false, got {v:?}"))),
    }
}

fn on_off(v: &str) -> Result<bool> {
    flag(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_overrides() {
        let c = RunConfig::parse(
            "preset = toy\n[model]\nkernel_sizes = 3, 3, 5 # c\n[decode]\nstrategy = greedy\n",
            None,
        )
        .unwrap();
        assert_eq!(c.model.kernel_sizes, vec![3, 3, 5]);
        assert_eq!(c.decode_strategy, "greedy");
        c.validate().unwrap();
    }

    #[test]
    fn errors_name_the_line() {
        let e = RunConfig::parse("[model]\nwidth = 3\n", None).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(RunConfig::parse("[model]\nh\n", None).is_err());
    }

    #[test]
    fn text_round_trips() {
        for p in [Preset::Toy, Preset::Paper] {
            let c = RunConfig::preset(p);
            assert_eq!(RunConfig::parse(&c.to_text(), None).unwrap(), c);
        }
    }
}
