use std::fmt;
use std::time::Instant;

use super::{adam_step, lr_schedule, multi_task_loss, AdamState, Checkpoint, TrainConfig};
use crate::data::{make_batches, pair_tokens, TaggedPair};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Session, Tensor};

/// SplitMix64 finaliser, used to derive independent stream seeds.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// An endless sequence of micro-batches, reshuffled every epoch. The batch
/// for micro-step `k` depends only on the pairs, the budget, the seed and
/// `k`, which is what makes a resumed run line up with an uninterrupted one.
pub struct BatchStream {
    pairs: Vec<TaggedPair>,
    max_tokens: usize,
    seed: u64,
    epoch: u64,
    batches: Vec<Vec<TaggedPair>>,
    next: usize,
}

impl BatchStream {
    pub fn new(pairs: Vec<TaggedPair>, max_tokens: usize, seed: u64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::data("no training pairs"));
        }
        let batches = make_batches(&pairs, max_tokens, mix(seed, 0))?;
        Ok(BatchStream {
            pairs,
            max_tokens,
            seed,
            epoch: 0,
            batches,
            next: 0,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.batches.len()
    }

    fn load_epoch(&mut self, epoch: u64) -> Result<()> {
        if epoch != self.epoch {
            self.batches = make_batches(&self.pairs, self.max_tokens, mix(self.seed, epoch))?;
            self.epoch = epoch;
        }
        Ok(())
    }

    /// Positions the stream so the next batch is the one for micro-step `k`.
    pub fn seek(&mut self, k: u64) -> Result<()> {
        let per = self.batches.len() as u64;
        self.load_epoch(k / per)?;
        self.next = (k % per) as usize;
        Ok(())
    }

    pub fn next_batch(&mut self) -> Result<&[TaggedPair]> {
        if self.next == self.batches.len() {
            self.load_epoch(self.epoch + 1)?;
            self.next = 0;
        }
        self.next += 1;
        Ok(&self.batches[self.next - 1])
    }
}

/// One optimizer update's worth of training statistics. Loss values are
/// means over the accumulated micro-batches.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_mt: f64,
    pub loss_pos: Option<f64>,
    pub loss_ner: Option<f64>,
    pub tokens: usize,
    pub tokens_per_sec: f64,
}

impl fmt::Display for StepMetrics {
    /// Tab-separated: step, lr, loss_total, loss_mt, loss_pos, loss_ner,
    /// tokens/sec. Missing tagging losses print as `-`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| v.to_string());
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.1}",
            self.step,
            self.lr,
            self.loss_total,
            self.loss_mt,
            opt(self.loss_pos),
            opt(self.loss_ner),
            self.tokens_per_sec
        )
    }
}

#[derive(Default)]
struct Window {
    total: f64,
    mt: f64,
    pos: Option<f64>,
    ner: Option<f64>,
    tokens: usize,
    started: Option<Instant>,
}

/// Owns the model and optimizer state and applies micro-batches.
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub adam: AdamState,
    micro: u64,
    grads: Vec<Tensor>,
    window: Window,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::zeros(&model.store);
        let grads = adam.m.clone();
        Ok(Trainer {
            model,
            config,
            adam,
            micro: 0,
            grads,
            window: Window::default(),
        })
    }

    /// Optimizer updates applied so far.
    pub fn step(&self) -> u64 {
        self.adam.step
    }

    /// Micro-batches consumed so far.
    pub fn micro_steps(&self) -> u64 {
        self.micro
    }

    /// Forward and backward on one micro-batch, its loss scaled by
    /// `1 / accum_steps`. Every `accum_steps`-th call applies the summed
    /// gradient and returns the step's metrics.
    pub fn train_micro_batch(&mut self, batch: &[TaggedPair]) -> Result<Option<StepMetrics>> {
        if batch.is_empty() {
            return Err(Error::data("empty batch"));
        }
        let window = &mut self.window;
        window.started.get_or_insert_with(Instant::now);
        let accum = self.config.accum_steps;
        let mut sess = Session::new(&self.model.store, true, mix(self.config.seed, self.micro + 1));
        let out = self.model.forward_train(&mut sess, batch)?;
        let parts = multi_task_loss(&mut sess.tape, &out, self.config.lambda_pos, self.config.lambda_ner)?;
        let scaled = sess.tape.scale(parts.total, 1.0 / accum as f64);
        sess.tape.backward(scaled)?;
        for (id, g) in sess.param_grads() {
            for (a, b) in self.grads[id.index()].data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        let value = |v| sess.value(v).item();
        window.total += value(parts.total);
        window.mt += value(parts.translation);
        if let Some(p) = parts.pos {
            *window.pos.get_or_insert(0.0) += value(p);
        }
        if let Some(n) = parts.ner {
            *window.ner.get_or_insert(0.0) += value(n);
        }
        window.tokens += batch.iter().map(pair_tokens).sum::<usize>();
        drop(sess);
        self.micro += 1;
        if !self.micro.is_multiple_of(accum) {
            return Ok(None);
        }

        let next = self.adam.step + 1;
        let lr = self.config.lr_scale * lr_schedule(next, self.model.config.d_model, self.config.warmup_steps)?;
        let Trainer {
            model,
            adam,
            grads,
            config,
            ..
        } = self;
        adam_step(&mut model.store, grads, adam, lr, config.betas, config.adam_eps)?;
        for g in grads.iter_mut() {
            g.data_mut().fill(0.0);
        }
        let w = std::mem::take(&mut self.window);
        let n = accum as f64;
        let secs = w.started.map_or(0.0, |s| s.elapsed().as_secs_f64());
        Ok(Some(StepMetrics {
            step: next,
            lr,
            loss_total: w.total / n,
            loss_mt: w.mt / n,
            loss_pos: w.pos.map(|x| x / n),
            loss_ner: w.ner.map(|x| x / n),
            tokens: w.tokens,
            tokens_per_sec: if secs > 0.0 { w.tokens as f64 / secs } else { 0.0 },
        }))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let named = |ts: &[Tensor]| {
            self.model
                .store
                .iter()
                .zip(ts)
                .map(|((n, _), t)| (n.to_string(), t.clone()))
                .collect()
        };
        Checkpoint {
            step: self.adam.step,
            params: self
                .model
                .store
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            m: named(&self.adam.m),
            v: named(&self.adam.v),
        }
    }

    /// Restores parameters, moments and position from a checkpoint taken
    /// at an optimizer-step boundary.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.validate()?;
        if ck.m.is_empty() {
            return Err(Error::data("checkpoint carries no optimizer state to resume from"));
        }
        self.model.store.load_from(&ck.params)?;
        let mut scratch = self.model.store.clone();
        for (dst, src) in [(&mut self.adam.m, &ck.m), (&mut self.adam.v, &ck.v)] {
            scratch.load_from(src)?;
            *dst = scratch.iter().map(|(_, t)| t.clone()).collect();
        }
        self.adam.step = ck.step;
        self.micro = ck.step * self.config.accum_steps;
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
        self.window = Window::default();
        Ok(())
    }
}
