//! Adam with warmup and inverse-square-root decay, the weighted multi-task
//! loss, gradient accumulation, checkpoints and checkpoint averaging.

mod checkpoint;
mod loss;
mod optim;
mod trainer;

pub use checkpoint::{average_checkpoints, Checkpoint};
pub use loss::{multi_task_loss, LossParts};
pub use optim::{adam_step, lr_schedule, AdamState};
pub use trainer::{BatchStream, StepMetrics, Trainer};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub warmup_steps: u64,
    /// Micro-batches to run; the optimizer steps `total_steps / accum_steps`
    /// times.
    pub total_steps: u64,
    pub accum_steps: u64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    /// Multiplier applied to the scheduled learning rate.
    pub lr_scale: f64,
    pub lambda_pos: f64,
    pub lambda_ner: f64,
    pub seed: u64,
    /// Optimizer steps between checkpoints.
    pub checkpoint_every: u64,
    pub keep_last: usize,
    /// Token budget (source plus target) of one micro-batch.
    pub max_tokens: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            warmup_steps: 4000,
            total_steps: 320_000,
            accum_steps: 1,
            betas: (0.9, 0.98),
            adam_eps: 1e-9,
            lr_scale: 1.0,
            lambda_pos: 0.3,
            lambda_ner: 0.3,
            seed: 1,
            checkpoint_every: 500,
            keep_last: 10,
            max_tokens: 4096,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.accum_steps == 0 {
            return bad("accum_steps must be at least 1".into());
        }
        if self.warmup_steps == 0 {
            return bad("warmup_steps must be at least 1".into());
        }
        if self.lambda_pos < 0.0 || self.lambda_ner < 0.0 {
            return bad(format!(
                "task weights must be non-negative, got {} and {}",
                self.lambda_pos, self.lambda_ner
            ));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad(format!("Adam betas ({b1}, {b2}) outside [0, 1)"));
        }
        if self.adam_eps <= 0.0 || self.lr_scale <= 0.0 {
            return bad("adam_eps and lr_scale must be positive".into());
        }
        if self.checkpoint_every == 0 || self.keep_last == 0 || self.max_tokens == 0 {
            return bad("checkpoint_every, keep_last and max_tokens must be positive".into());
        }
        Ok(())
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.total_steps / self.accum_steps
    }
}
