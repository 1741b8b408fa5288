//! Training pipeline, evaluation and metrics.
//!
//! Every task goes through the same three steps: a fresh [`TaskBlock`] has its
//! keys trained on the task's queries (preparation), its increments trained
//! through retrieval-weighted backpropagation with keys frozen (fine-tune), and
//! is then merged into the store. After each merge all tasks seen so far are
//! evaluated, filling one row of the accuracy matrix.
//!
//! [`TaskBlock`]: crate::keystore::TaskBlock

mod checkpoint;
mod eval;
mod metrics;
mod optim;
mod pipeline;
mod stages;

use serde::{Deserialize, Serialize};


pub use checkpoint::{
    write_json, write_metrics_csv, Checkpoint, NetFile, CHECKPOINT_FORMAT_VERSION, CONFIG_FILE, METRICS_CSV,
    METRICS_FILE, NET_FILE, STORE_FILE, TIMINGS_FILE,
};
pub use eval::{accuracy, baseline_accuracy, evaluate_store, retrieval_accuracy, task_retrieval_accuracy};
pub use metrics::{forgetting, BoundMetrics, CheckpointValue, MetricRow, RunMetrics, StageTiming, TaskValue, Timings};
pub use optim::{Optimizer, OptimizerKind};
pub use pipeline::{
    baseline_finetune, separate_finetune_bound, train_continual, BaselineRun, ContinualRun, Frozen, SeparateRun,
};
pub use stages::{finetune_shared, finetune_stage, mean_block_loss, preparation_stage, FinetuneLog, PrepLog};

use crate::error::{Result, SlmError};
use crate::keystore::RetrievalConfig;

/// Which keys the fine-tune stage retrieves from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainScope {
    /// Only the task's own block.
    #[default]
    Block,
    /// The merged store plus the task's block, as at inference. Gradients
    /// reaching frozen increments of earlier tasks are dropped.
    Merged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Grouping, top-K, mask rate and the key step size (`key_lr`).
    pub retrieval: RetrievalConfig,
    pub rank: usize,
    pub prep_epochs: usize,
    pub finetune_lr: f64,
    /// Scales `finetune_lr`; kept separate so rank sweeps can rescale.
    pub lr_multiplier: f64,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub train_scope: TrainScope,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig {
                key_lr: 0.05,
                ..RetrievalConfig::default()
            },
            rank: 4,
            prep_epochs: 3,
            finetune_lr: 0.03,
            lr_multiplier: 1.0,
            finetune_epochs: 5,
            batch_size: 8,
            optimizer: OptimizerKind::Adamw,
            weight_decay: 0.01,
            train_scope: TrainScope::Block,
            seed: 17,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.retrieval.key_lr.is_finite() && self.retrieval.key_lr > 0.0) {
            return Err(SlmError::config("train.prep_lr", "must be positive"));
        }
        if !(self.finetune_lr.is_finite() && self.finetune_lr > 0.0) {
            return Err(SlmError::config("train.finetune_lr", "must be positive"));
        }
        if !(self.lr_multiplier.is_finite() && self.lr_multiplier > 0.0) {
            return Err(SlmError::config("train.lr_multiplier", "must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(SlmError::config("train.weight_decay", "must be non-negative"));
        }
        if self.prep_epochs == 0 {
            return Err(SlmError::config("train.prep_epochs", "must be at least 1"));
        }
        if self.finetune_epochs == 0 {
            return Err(SlmError::config("train.finetune_epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(SlmError::config("train.batch_size", "must be at least 1"));
        }
        if self.rank == 0 {
            return Err(SlmError::config("retrieval.rank", "must be at least 1"));
        }
        Ok(())
    }

    pub fn effective_lr(&self) -> f64 {
        self.finetune_lr * self.lr_multiplier
    }

    pub fn optimizer(&self) -> Optimizer {
        Optimizer::new(self.optimizer, self.effective_lr(), self.weight_decay)
    }
}
