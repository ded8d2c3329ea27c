use std::fmt;
use std::io::Write;
use std::path::Path;

use ctxformer::config::RunConfig;
use ctxformer::data::{read_corpus, TaggedPair, TextPair, Tokenizer};
use ctxformer::infer::{teacher_forced_report, TeacherForcedReport};
use ctxformer::model::Model;
use ctxformer::training::{average_checkpoints, BatchStream, Checkpoint, Trainer};
use ctxformer::{Error, Result};

use crate::RunDir;

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from the newest checkpoint instead of starting over.
    pub resume: bool,
    /// Stop right after this optimizer step, without writing the final or
    /// averaged checkpoints, as if the process had been killed.
    pub stop_after: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Optimizer step reached.
    pub step: u64,
    /// Step the run started from (0 unless resumed).
    pub resumed_from: u64,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
    pub interrupted: bool,
    /// Teacher-forced accuracy of the averaged model on the valid split.
    pub valid: Option<TeacherForcedReport>,
}

impl fmt::Display for TrainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6}"));
        write!(
            f,
            "step={}\nresumed_from={}\nfirst_loss={}\nlast_loss={}\ninterrupted={}",
            self.step,
            self.resumed_from,
            opt(self.first_loss),
            opt(self.last_loss),
            self.interrupted
        )?;
        if let Some(v) = &self.valid {
            write!(
                f,
                "\nvalid_token_acc={:.6}\nvalid_pos_acc={}\nvalid_ner_acc={}",
                v.token_acc,
                opt(v.pos_acc),
                opt(v.ner_acc)
            )?;
        }
        Ok(())
    }
}

/// Encodes surface pairs, rejecting any that do not fit the model.
pub(crate) fn encode_pairs(
    text: &[TextPair],
    src: &Tokenizer,
    tgt: &Tokenizer,
    max_len: usize,
    origin: &Path,
) -> Result<Vec<TaggedPair>> {
    text.iter()
        .enumerate()
        .map(|(i, p)| {
            let t = Tokenizer::tag_pair(src, tgt, p);
            if t.src.len() > max_len || t.tgt.len() + 1 > max_len {
                return Err(Error::data(format!(
                    "{} record {}: {} source / {} target tokens exceed model.max_len {max_len}",
                    origin.display(),
                    i + 1,
                    t.src.len(),
                    t.tgt.len()
                )));
            }
            Ok(t)
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn remove_if_exists(path: &Path) -> Result<()> {
    let r = if path.is_dir() {
        std::fs::remove_dir_all(path)
    } else {
        std::fs::remove_file(path)
    };
    match r {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e)),
        _ => Ok(()),
    }
}

/// Trains to `total_steps` micro-batches. Writes one metrics line per
/// optimizer step, a checkpoint every `checkpoint_every` steps (keeping
/// the newest `keep_last`), then `final.ckpt` and the average of the kept
/// checkpoints as `average.ckpt`.
pub fn cmd_train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainReport> {
    cfg.validate()?;
    let rd = RunDir::new(&cfg.out_dir);
    let train_path = cfg.data.corpus_dir.join("train.txt");
    let train_text = read_corpus(&train_path)?;
    if train_text.is_empty() {
        return Err(Error::data(format!("{} holds no records", train_path.display())));
    }
    let valid_path = cfg.data.corpus_dir.join("valid.txt");
    let valid_text = if valid_path.exists() {
        read_corpus(&valid_path)?
    } else {
        Vec::new()
    };
    std::fs::create_dir_all(rd.checkpoints()).map_err(|e| Error::io(rd.checkpoints(), e))?;

    let (src_tok, tgt_tok) = if opts.resume {
        (
            Tokenizer::load(&rd.src_tokenizer())?,
            Tokenizer::load(&rd.tgt_tokenizer())?,
        )
    } else {
        let srcs: Vec<&[String]> = train_text.iter().map(|p| p.src.as_slice()).collect();
        let tgts: Vec<&[String]> = train_text.iter().map(|p| p.tgt.as_slice()).collect();
        let s = Tokenizer::train(&srcs, cfg.data.bpe_merges)?;
        let t = Tokenizer::train(&tgts, cfg.data.bpe_merges)?;
        s.save(&rd.src_tokenizer())?;
        t.save(&rd.tgt_tokenizer())?;
        (s, t)
    };
    write_text(&rd.config(), &cfg.to_text())?;
    let max_len = cfg.model.max_len;
    let pairs = encode_pairs(&train_text, &src_tok, &tgt_tok, max_len, &train_path)?;
    let valid = encode_pairs(&valid_text, &src_tok, &tgt_tok, max_len, &valid_path)?;
    let model = Model::new(RunDir::model_config(cfg, &src_tok, &tgt_tok))?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;

    if opts.resume {
        let mut candidates = rd.list_checkpoints()?;
        if rd.final_checkpoint().exists() {
            let step = Checkpoint::load(&rd.final_checkpoint())?.step;
            candidates.push((step, rd.final_checkpoint()));
        }
        let (_, path) = candidates
            .into_iter()
            .max_by_key(|(s, _)| *s)
            .ok_or_else(|| Error::data(format!("no checkpoint to resume from in {}", rd.root.display())))?;
        let ck = Checkpoint::load(&path)?;
        if ck.step * cfg.train.accum_steps > cfg.train.total_steps {
            return Err(Error::config(format!(
                "checkpoint {} is at step {}, beyond total_steps",
                path.display(),
                ck.step
            )));
        }
        trainer.restore(&ck)?;
        let log = std::fs::read_to_string(rd.metrics()).unwrap_or_default();
        let kept: String = log.lines().take(ck.step as usize).map(|l| format!("{l}\n")).collect();
        write_text(&rd.metrics(), &kept)?;
    } else {
        for p in [
            rd.checkpoints(),
            rd.metrics(),
            rd.final_checkpoint(),
            rd.average_checkpoint(),
        ] {
            remove_if_exists(&p)?;
        }
        std::fs::create_dir_all(rd.checkpoints()).map_err(|e| Error::io(rd.checkpoints(), e))?;
    }
    let resumed_from = trainer.step();

    let mut stream = BatchStream::new(pairs, cfg.train.max_tokens, cfg.train.seed)?;
    stream.seek(trainer.micro_steps())?;
    let metrics_path = rd.metrics();
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let mut report = TrainReport {
        step: trainer.step(),
        resumed_from,
        first_loss: None,
        last_loss: None,
        interrupted: false,
        valid: None,
    };
    while trainer.micro_steps() < cfg.train.total_steps {
        let batch = stream.next_batch()?;
        let Some(m) = trainer.train_micro_batch(batch)? else {
            continue;
        };
        writeln!(log, "{m}").map_err(|e| Error::io(&metrics_path, e))?;
        report.first_loss.get_or_insert(m.loss_total);
        report.last_loss = Some(m.loss_total);
        report.step = m.step;
        if m.step % cfg.train.checkpoint_every == 0 {
            trainer.checkpoint().save(&rd.checkpoint(m.step))?;
            let kept = rd.list_checkpoints()?;
            let excess = kept.len().saturating_sub(cfg.train.keep_last);
            for (_, old) in &kept[..excess] {
                remove_if_exists(old)?;
                remove_if_exists(&ctxformer::tensor::manifest_path(old))?;
            }
        }
        if opts.stop_after == Some(m.step) {
            report.interrupted = true;
            return Ok(report);
        }
    }
    log.flush().map_err(|e| Error::io(&metrics_path, e))?;

    let last = trainer.checkpoint();
    last.save(&rd.final_checkpoint())?;
    let mut window = rd
        .list_checkpoints()?
        .iter()
        .map(|(_, p)| Checkpoint::load(p))
        .collect::<Result<Vec<_>>>()?;
    if window.is_empty() {
        window.push(last);
    }
    let avg = average_checkpoints(&window)?;
    avg.save(&rd.average_checkpoint())?;
    if !valid.is_empty() {
        trainer.model.store.load_from(&avg.params)?;
        report.valid = Some(teacher_forced_report(&trainer.model, &valid)?);
    }
    Ok(report)
}
