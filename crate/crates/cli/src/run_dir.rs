use std::path::{Path, PathBuf};

use ctxformer::config::RunConfig;
use ctxformer::data::{NerTag, PosTag, Tokenizer};
use ctxformer::model::{Model, ModelConfig};
use ctxformer::training::Checkpoint;
use ctxformer::{Error, Result};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "CTXFORMER_THREADS";

/// Worker threads allowed by [`THREADS_ENV`] (default 1).
pub fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

/// File layout of a training run.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn src_tokenizer(&self) -> PathBuf {
        self.root.join("src.tok")
    }

    pub fn tgt_tokenizer(&self) -> PathBuf {
        self.root.join("tgt.tok")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("run.cfg")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.tsv")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.checkpoints().join(format!("step-{step:08}.ckpt"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.root.join("final.ckpt")
    }

    pub fn average_checkpoint(&self) -> PathBuf {
        self.root.join("average.ckpt")
    }

    /// Cadence checkpoints, oldest first.
    pub fn list_checkpoints(&self) -> Result<Vec<(u64, PathBuf)>> {
        let dir = self.checkpoints();
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut found = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let step = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("step-"))
                .and_then(|n| n.strip_suffix(".ckpt"))
                .and_then(|n| n.parse::<u64>().ok());
            if let Some(step) = step {
                found.push((step, path));
            }
        }
        found.sort();
        Ok(found)
    }

    /// Model architecture for this run's vocabularies.
    pub fn model_config(cfg: &RunConfig, src: &Tokenizer, tgt: &Tokenizer) -> ModelConfig {
        ModelConfig {
            vocab_src: src.vocab().len(),
            vocab_tgt: tgt.vocab().len(),
            n_pos_tags: PosTag::ALL.len(),
            n_ner_tags: NerTag::ALL.len(),
            ..cfg.model.clone()
        }
    }

    /// The trained model and both tokenizers. `checkpoint` defaults to the
    /// averaged checkpoint.
    pub fn load_model(&self, cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(Model, Tokenizer, Tokenizer)> {
        let src = Tokenizer::load(&self.src_tokenizer())?;
        let tgt = Tokenizer::load(&self.tgt_tokenizer())?;
        let path = checkpoint.map_or_else(|| self.average_checkpoint(), Path::to_path_buf);
        let ck = Checkpoint::load(&path)?;
        let mut model = Model::new(Self::model_config(cfg, &src, &tgt))?;
        model.store.load_from(&ck.params).map_err(|e| match e {
            Error::Data(m) => Error::data(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok((model, src, tgt))
    }
}
