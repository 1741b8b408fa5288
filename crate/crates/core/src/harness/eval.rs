use rayon::prelude::*;

use crate::error::{Result, SlmError};
use crate::harness::Frozen;
use crate::jare::{CombinedDelta, IncrementSet};
use crate::keystore::KeyValueStore;
use crate::model::predict;
use crate::numerics::argmax;
use crate::tasks::{Example, Suite};
use crate::{FrozenEncoder, TaskId, ValueId};

fn percent(correct: usize, total: usize) -> f64 {
    100.0 * correct as f64 / total as f64
}

fn nonempty(examples: &[Example]) -> Result<()> {
    if examples.is_empty() {
        return Err(SlmError::Input("cannot evaluate on an empty example set".into()));
    }
    Ok(())
}

/// Percent of `examples` classified correctly through the store.
///
/// With `use_task_id` retrieval is restricted to each example's own task;
/// otherwise the task id is only read to pick the label being scored.
pub fn accuracy(frozen: &Frozen, store: &KeyValueStore, examples: &[Example], use_task_id: bool) -> Result<f64> {
    nonempty(examples)?;
    let top_k = store.top_k();
    let hits = examples
        .par_iter()
        .map(|ex| {
            let filter = use_task_id.then_some(ex.task);
            predict(&ex.tokens, &frozen.net, &frozen.encoder, store, top_k, filter).map(|p| p == ex.label)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(percent(hits.iter().filter(|&&h| h).count(), examples.len()))
}

/// Percent correct for the shared-increment baseline.
pub fn baseline_accuracy(frozen: &Frozen, values: &IncrementSet, examples: &[Example]) -> Result<f64> {
    nonempty(examples)?;
    let delta = CombinedDelta::single(ValueId(0), values);
    let hits = examples
        .par_iter()
        .map(|ex| Ok(argmax(&frozen.net.forward(&ex.tokens, &delta)?) == ex.label))
        .collect::<Result<Vec<bool>>>()?;
    Ok(percent(hits.iter().filter(|&&h| h).count(), examples.len()))
}

/// Accuracy on each of `tasks`' test sets, in order.
pub fn evaluate_store(
    frozen: &Frozen,
    store: &KeyValueStore,
    suite: &Suite,
    tasks: &[TaskId],
    use_task_id: bool,
) -> Result<Vec<f64>> {
    tasks
        .iter()
        .map(|&t| accuracy(frozen, store, suite.test_set(t)?, use_task_id))
        .collect()
}

/// Majority rule: strictly more than half of the hits carry `task`.
pub(crate) fn majority_owned(hit_tasks: impl IntoIterator<Item = TaskId>, task: TaskId) -> bool {
    let (mut own, mut total) = (0usize, 0usize);
    for t in hit_tasks {
        total += 1;
        own += usize::from(t == task);
    }
    2 * own > total
}

/// Fraction of queries whose unfiltered retrieval is majority-owned by the
/// query's task.
pub fn retrieval_accuracy(store: &KeyValueStore, queries: &[(Vec<f64>, TaskId)]) -> Result<f64> {
    if queries.is_empty() {
        return Err(SlmError::Input("retrieval accuracy needs at least one query".into()));
    }
    let top_k = store.top_k();
    let correct = queries
        .par_iter()
        .map(|(q, task)| Ok(majority_owned(store.retrieve(q, top_k, None)?.iter().map(|h| h.task_id), *task)))
        .collect::<Result<Vec<bool>>>()?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / queries.len() as f64)
}

/// [`retrieval_accuracy`] over encoded examples.
pub fn task_retrieval_accuracy(encoder: &FrozenEncoder, store: &KeyValueStore, examples: &[Example]) -> Result<f64> {
    let queries = examples
        .iter()
        .map(|ex| Ok((encoder.encode(&ex.tokens)?, ex.task)))
        .collect::<Result<Vec<_>>>()?;
    retrieval_accuracy(store, &queries)
}
