//! Grouped key-value memory.
//!
//! Keys live in `g` groups of dimension `h = c/g`; a query is split into the
//! same `g` slices and each slice retrieves its own top-K keys. Every key owns
//! one increment set. A task's keys and increments are trained in a detached
//! [`TaskBlock`] and only join the global [`KeyValueStore`] on merge, at which
//! point they are frozen.

mod persist;
mod scoring;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

pub use persist::{StoreFile, STORE_FORMAT_VERSION};
pub use scoring::{masked_scores, partition_query, topk, GroupPartition, Score};

use crate::error::{Result, SlmError};
use crate::jare::{IncrementSet, LayerShape};
use crate::numerics::{cosine_grad_wrt_key, cosine_similarity, fingerprint, orthogonal_init, Matrix, SeededRng};
use crate::{TaskId, ValueId};

/// Retrieval and key-training knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Number of groups `g`.
    pub groups: usize,
    /// Keys retrieved per group `K`.
    pub top_k: usize,
    /// New keys per group for every task.
    pub keys_per_task: usize,
    /// Bernoulli mask rate applied while training keys.
    pub mask_prob: f64,
    /// Step size `γ` of the key update.
    pub key_lr: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            groups: 4,
            top_k: 2,
            keys_per_task: 4,
            mask_prob: 0.2,
            key_lr: 1e-3,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self, query_dim: usize) -> Result<GroupPartition> {
        let partition = GroupPartition::new(self.groups, query_dim)?;
        if self.keys_per_task == 0 {
            return Err(SlmError::config("retrieval.keys_per_task", "must be positive"));
        }
        if self.top_k == 0 || self.top_k > self.keys_per_task {
            return Err(SlmError::config(
                "retrieval.top_k",
                format!("must be in [1, keys_per_task = {}]", self.keys_per_task),
            ));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(SlmError::config("retrieval.mask_prob", "must be in [0, 1]"));
        }
        if !self.key_lr.is_finite() || self.key_lr < 0.0 {
            return Err(SlmError::config("train.prep_lr", "must be finite and non-negative"));
        }
        Ok(partition)
    }
}

/// One key and the increment it owns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub key: Vec<f64>,
    pub value_id: ValueId,
    /// Bookkeeping only; unfiltered retrieval never reads it.
    pub task_id: TaskId,
    pub frozen: bool,
}

/// One retrieval hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Retrieved {
    pub group: usize,
    /// Position of the entry within its group's candidate list.
    pub slot: usize,
    pub value_id: ValueId,
    pub task_id: TaskId,
    pub similarity: f64,
}

/// Keys and increments for one task, before merging.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskBlock {
    pub task_id: TaskId,
    pub groups: Vec<Vec<KeyEntry>>,
    pub values: BTreeMap<ValueId, IncrementSet>,
}

impl TaskBlock {
    /// Fresh block: `keys_per_task` orthonormal keys per group, each owning a
    /// zero-effect increment set.
    pub fn init(
        task_id: TaskId,
        cfg: &RetrievalConfig,
        partition: &GroupPartition,
        layer_shapes: &[LayerShape],
        rank: usize,
        rng: &SeededRng,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(SlmError::config("retrieval.rank", "must be positive"));
        }
        let h = partition.key_dim();
        let mut groups = Vec::with_capacity(partition.groups());
        let mut values = BTreeMap::new();
        for g in 0..partition.groups() {
            let keys = orthogonal_init(cfg.keys_per_task, h, &mut rng.substream(format!("keys/g{g}")))?;
            let mut entries = Vec::with_capacity(cfg.keys_per_task);
            for slot in 0..cfg.keys_per_task {
                let value_id = ValueId::for_slot(task_id, g, slot);
                let set = IncrementSet::init(
                    layer_shapes,
                    rank,
                    &rng.substream(format!("values/g{g}/k{slot}")),
                )?;
                values.insert(value_id, set);
                entries.push(KeyEntry {
                    key: keys.row(slot).to_vec(),
                    value_id,
                    task_id,
                    frozen: false,
                });
            }
            groups.push(entries);
        }
        Ok(Self {
            task_id,
            groups,
            values,
        })
    }

    pub fn entry_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn freeze_keys(&mut self) {
        self.groups
            .iter_mut()
            .flatten()
            .for_each(|e| e.frozen = true);
    }

    pub fn keys_digest(&self) -> String {
        fingerprint(self.groups.iter().flatten().map(|e| e.key.as_slice()))
    }

    pub fn values_digest(&self) -> String {
        fingerprint(self.values.values().flat_map(IncrementSet::parameter_slices))
    }

    /// Unmasked top-K per group over this block only.
    pub fn retrieve(&self, partition: &GroupPartition, q: &[f64], top_k: usize) -> Result<Vec<Retrieved>> {
        retrieve_in(partition, &[&self.groups], q, top_k, None)
    }
}

/// One key-training step for a single query.
///
/// Per group: masked scores over the block's keys, top-K selection, then
/// `k ← k + γ ∇_k cos(q', k)` on the selected keys. Unselected and frozen keys
/// are left untouched. Returns the `(group, slot)` pairs that moved.
pub fn update_keys(
    q: &[f64],
    block: &mut TaskBlock,
    partition: &GroupPartition,
    cfg: &RetrievalConfig,
    rng: &mut SeededRng,
) -> Result<Vec<(usize, usize)>> {
    if !cfg.key_lr.is_finite() || cfg.key_lr < 0.0 {
        return Err(SlmError::config("train.prep_lr", "must be finite and non-negative"));
    }
    let slices = partition.split(q)?;
    let mut moved = Vec::new();
    for (g, (slice, entries)) in slices.iter().zip(block.groups.iter_mut()).enumerate() {
        let keys: Vec<&[f64]> = entries.iter().map(|e| e.key.as_slice()).collect();
        let scores = masked_scores(slice, &keys, cfg.mask_prob, cfg.top_k, rng)?;
        let picked = topk(&scores, cfg.top_k)?;
        for (slot, _) in picked {
            let entry = &mut entries[slot];
            if entry.frozen {
                continue;
            }
            let grad = cosine_grad_wrt_key(slice, &entry.key)?;
            for (k, g) in entry.key.iter_mut().zip(&grad) {
                *k += cfg.key_lr * g;
            }
            moved.push((g, slot));
        }
    }
    Ok(moved)
}

/// Top-K per group over the concatenation of `sources`' groups.
pub(crate) fn retrieve_in(
    partition: &GroupPartition,
    sources: &[&[Vec<KeyEntry>]],
    q: &[f64],
    top_k: usize,
    task_filter: Option<TaskId>,
) -> Result<Vec<Retrieved>> {
    let slices = partition.split(q)?;
    let mut out = Vec::with_capacity(slices.len() * top_k);
    for (g, slice) in slices.iter().enumerate() {
        let candidates: Vec<&KeyEntry> = sources
            .iter()
            .flat_map(|src| src.get(g).into_iter().flatten())
            .filter(|e| task_filter.is_none_or(|t| e.task_id == t))
            .collect();
        if candidates.is_empty() {
            return Err(SlmError::Retrieval(format!("group {g} has no candidate keys")));
        }
        let scores = candidates
            .iter()
            .map(|e| cosine_similarity(slice, &e.key).map(|c| Score::Value(c.value)))
            .collect::<Result<Vec<_>>>()?;
        for (slot, similarity) in topk(&scores, top_k)? {
            let e = candidates[slot];
            out.push(Retrieved {
                group: g,
                slot,
                value_id: e.value_id,
                task_id: e.task_id,
                similarity,
            });
        }
    }
    Ok(out)
}

/// The merged, frozen memory.
#[derive(Debug)]
pub struct KeyValueStore {
    partition: GroupPartition,
    top_k: usize,
    keys_per_task: usize,
    rank: usize,
    groups: Vec<Vec<KeyEntry>>,
    values: BTreeMap<ValueId, IncrementSet>,
    tasks: Vec<TaskId>,
    filtered_calls: AtomicU64,
}

impl Clone for KeyValueStore {
    fn clone(&self) -> Self {
        Self {
            partition: self.partition,
            top_k: self.top_k,
            keys_per_task: self.keys_per_task,
            rank: self.rank,
            groups: self.groups.clone(),
            values: self.values.clone(),
            tasks: self.tasks.clone(),
            filtered_calls: AtomicU64::new(0),
        }
    }
}

impl PartialEq for KeyValueStore {
    fn eq(&self, other: &Self) -> bool {
        self.partition == other.partition
            && self.top_k == other.top_k
            && self.keys_per_task == other.keys_per_task
            && self.rank == other.rank
            && self.groups == other.groups
            && self.values == other.values
            && self.tasks == other.tasks
    }
}

impl KeyValueStore {
    pub fn new(partition: GroupPartition, top_k: usize, keys_per_task: usize, rank: usize) -> Self {
        Self {
            partition,
            top_k,
            keys_per_task,
            rank,
            groups: vec![Vec::new(); partition.groups()],
            values: BTreeMap::new(),
            tasks: Vec::new(),
            filtered_calls: AtomicU64::new(0),
        }
    }

    pub fn partition(&self) -> &GroupPartition {
        &self.partition
    }

    pub fn groups(&self) -> usize {
        self.partition.groups()
    }

    pub fn key_dim(&self) -> usize {
        self.partition.key_dim()
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn keys_per_task(&self) -> usize {
        self.keys_per_task
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Task ids in merge order.
    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub(crate) fn group_lists(&self) -> &[Vec<KeyEntry>] {
        &self.groups
    }

    pub fn group_entries(&self, group: usize) -> Result<&[KeyEntry]> {
        self.groups
            .get(group)
            .map(Vec::as_slice)
            .ok_or(SlmError::Index {
                what: "group",
                index: group,
                len: self.groups.len(),
            })
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, &KeyEntry)> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, es)| es.iter().map(move |e| (g, e)))
    }

    pub fn entry_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn values(&self) -> &BTreeMap<ValueId, IncrementSet> {
        &self.values
    }

    pub fn value(&self, id: ValueId) -> Result<&IncrementSet> {
        self.values
            .get(&id)
            .ok_or_else(|| SlmError::Lookup(format!("no increment {id}")))
    }

    /// Number of retrievals issued with a task filter since construction.
    pub fn filtered_retrievals(&self) -> u64 {
        self.filtered_calls.load(Ordering::Relaxed)
    }

    /// Top-K per group over merged entries, optionally restricted to one task.
    pub fn retrieve(&self, q: &[f64], top_k: usize, task_filter: Option<TaskId>) -> Result<Vec<Retrieved>> {
        if self.is_empty() {
            return Err(SlmError::Retrieval("store is empty".into()));
        }
        if let Some(t) = task_filter {
            if !self.tasks.contains(&t) {
                return Err(SlmError::Lookup(format!("task {t} is not in the store")));
            }
            self.filtered_calls.fetch_add(1, Ordering::Relaxed);
        }
        retrieve_in(&self.partition, &[&self.groups], q, top_k, task_filter)
    }

    /// Appends a trained block, freezing its keys.
    pub fn merge(&mut self, mut block: TaskBlock) -> Result<()> {
        if block.groups.len() != self.groups.len() {
            return Err(SlmError::Integrity(format!(
                "block has {} groups, store has {}",
                block.groups.len(),
                self.groups.len()
            )));
        }
        if self.tasks.contains(&block.task_id) {
            return Err(SlmError::Integrity(format!("task {} already merged", block.task_id)));
        }
        let mut seen = BTreeSet::new();
        for e in block.groups.iter().flatten() {
            if e.key.len() != self.key_dim() {
                return Err(SlmError::Integrity(format!(
                    "key {} has dimension {}, expected {}",
                    e.value_id,
                    e.key.len(),
                    self.key_dim()
                )));
            }
            if !e.key.iter().all(|v| v.is_finite()) {
                return Err(SlmError::Integrity(format!("key {} is not finite", e.value_id)));
            }
            if self.values.contains_key(&e.value_id) || !seen.insert(e.value_id) {
                return Err(SlmError::Integrity(format!("duplicate value id {}", e.value_id)));
            }
            if !block.values.contains_key(&e.value_id) {
                return Err(SlmError::Integrity(format!("key {} has no increment", e.value_id)));
            }
        }
        if block.values.len() != seen.len() {
            return Err(SlmError::Integrity("block holds unreferenced increments".into()));
        }
        let sizes: BTreeSet<usize> = block.groups.iter().map(Vec::len).collect();
        if sizes.len() != 1 {
            return Err(SlmError::Integrity("block groups differ in size".into()));
        }
        block.freeze_keys();
        for (dst, src) in self.groups.iter_mut().zip(block.groups) {
            dst.extend(src);
        }
        self.values.extend(block.values);
        self.tasks.push(block.task_id);
        Ok(())
    }

    /// The store as it was after its first `n_tasks` merges.
    pub fn prefix(&self, n_tasks: usize) -> Result<KeyValueStore> {
        if n_tasks > self.tasks.len() {
            return Err(SlmError::Index {
                what: "task prefix",
                index: n_tasks,
                len: self.tasks.len(),
            });
        }
        let kept: BTreeSet<TaskId> = self.tasks[..n_tasks].iter().copied().collect();
        let mut out = KeyValueStore::new(self.partition, self.top_k, self.keys_per_task, self.rank);
        for (dst, src) in out.groups.iter_mut().zip(&self.groups) {
            dst.extend(src.iter().filter(|e| kept.contains(&e.task_id)).cloned());
        }
        out.values = self
            .values
            .iter()
            .filter(|(id, _)| out.groups.iter().flatten().any(|e| e.value_id == **id))
            .map(|(id, v)| (*id, v.clone()))
            .collect();
        out.tasks = self.tasks[..n_tasks].to_vec();
        Ok(out)
    }

    /// Pairwise key cosines within one group, in entry order.
    pub fn similarity_matrix(&self, group: usize) -> Result<Matrix> {
        let entries = self.group_entries(group)?;
        if entries.is_empty() {
            return Err(SlmError::Retrieval(format!("group {group} is empty")));
        }
        let n = entries.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
            for j in i + 1..n {
                let c = cosine_similarity(&entries[i].key, &entries[j].key)?.value;
                m.set(i, j, c);
                m.set(j, i, c);
            }
        }
        Ok(m)
    }

    pub fn frozen_keys_digest(&self) -> String {
        fingerprint(
            self.groups
                .iter()
                .flatten()
                .filter(|e| e.frozen)
                .map(|e| e.key.as_slice()),
        )
    }

    pub fn values_digest(&self) -> String {
        fingerprint(self.values.values().flat_map(IncrementSet::parameter_slices))
    }
}
