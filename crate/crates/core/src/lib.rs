//! Continual learning by retrieving and combining low-rank weight increments.
//!
//! A frozen encoder maps each input to a query vector. Grouped keys, trained
//! per task and then frozen, select a handful of stored low-rank increments;
//! their similarity-weighted combination re-parameterises a frozen network for
//! that input. New tasks only add keys and increments, so earlier tasks keep
//! their behaviour.

pub mod embedder;
pub mod error;
pub mod harness;
pub mod jare;
pub mod keystore;
pub mod model;
pub mod numerics;
pub mod run_config;
pub mod tasks;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use embedder::FrozenEncoder;
pub use error::{Result, SlmError};
pub use jare::{CombinedDelta, IncrementSet, LayerId, LowRankIncrement};
pub use keystore::{KeyEntry, KeyValueStore, RetrievalConfig, TaskBlock};
pub use model::MicroNet;
pub use numerics::{Matrix, SeededRng};

pub type TokenId = u32;
pub type TaskId = u32;

/// Handle of a stored increment set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueId(pub u64);

impl ValueId {
    /// Packs `(task, group, slot)`; unique per key position.
    pub fn for_slot(task: TaskId, group: usize, slot: usize) -> Self {
        ValueId((u64::from(task) << 32) | ((group as u64 & 0xffff) << 16) | (slot as u64 & 0xffff))
    }
}

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}
