use std::collections::BTreeSet;

use crate::error::{Result, SlmError};
use crate::harness::{TrainConfig, TrainScope};
use crate::jare::{combine, CombinedDelta, IncrementSet};
use crate::keystore::{retrieve_in, update_keys, GroupPartition, KeyValueStore, TaskBlock};
use crate::model::{accumulate, GradMap, MicroNet};
use crate::numerics::SeededRng;
use crate::tasks::Example;
use crate::ValueId;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrepLog {
    /// Individual key moves summed over all steps.
    pub key_updates: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FinetuneLog {
    /// Mean training loss per epoch; each batch is measured before its step.
    pub epoch_losses: Vec<f64>,
    /// Increments that received at least one optimizer step.
    pub updated: BTreeSet<ValueId>,
    pub steps: usize,
}

/// Trains the block's keys on the task's queries, then freezes them.
///
/// Values are not touched. Each epoch visits the queries in a fresh seeded
/// order; every visit applies one masked top-K key update per group.
pub fn preparation_stage(
    queries: &[Vec<f64>],
    block: &mut TaskBlock,
    partition: &GroupPartition,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<PrepLog> {
    if queries.is_empty() {
        return Err(SlmError::Input("preparation stage needs at least one example".into()));
    }
    if block.groups.iter().flatten().any(|e| e.frozen) {
        return Err(SlmError::State(format!("keys of task {} are already frozen", block.task_id)));
    }
    let mut log = PrepLog::default();
    let mut order: Vec<usize> = (0..queries.len()).collect();
    for _ in 0..cfg.prep_epochs {
        rng.shuffle(&mut order);
        for &i in &order {
            let moved = update_keys(&queries[i], block, partition, &cfg.retrieval, rng)?;
            log.steps += 1;
            log.key_updates += moved.len();
            if moved
                .iter()
                .any(|&(g, slot)| block.groups[g][slot].key.iter().any(|v| !v.is_finite()))
            {
                return Err(SlmError::Numeric {
                    stage: "preparation".into(),
                    step: log.steps,
                });
            }
        }
    }
    block.freeze_keys();
    Ok(log)
}

/// Retrieval used while training a block: unmasked top-K per group.
fn training_delta<'a>(
    q: &[f64],
    block: &'a TaskBlock,
    partition: &GroupPartition,
    top_k: usize,
    merged: Option<&'a KeyValueStore>,
) -> Result<CombinedDelta<'a>> {
    let hits = match merged {
        Some(store) if !store.is_empty() => {
            retrieve_in(partition, &[store.group_lists(), &block.groups], q, top_k, None)?
        }
        _ => block.retrieve(partition, q, top_k)?,
    };
    let retrieved = hits
        .iter()
        .map(|h| {
            let set = match block.values.get(&h.value_id) {
                Some(set) => set,
                None => merged
                    .ok_or_else(|| SlmError::Lookup(format!("value {} not in block", h.value_id)))?
                    .value(h.value_id)?,
            };
            Ok((h.value_id, set, h.similarity))
        })
        .collect::<Result<Vec<_>>>()?;
    combine(&retrieved)
}

fn check_inputs(examples: &[Example], queries: &[Vec<f64>]) -> Result<()> {
    if examples.is_empty() {
        return Err(SlmError::Input("fine-tune stage needs at least one example".into()));
    }
    if examples.len() != queries.len() {
        return Err(SlmError::Input(format!(
            "{} examples but {} queries",
            examples.len(),
            queries.len()
        )));
    }
    Ok(())
}

/// Mean loss of `examples` under the block's own retrieval.
pub fn mean_block_loss(
    net: &MicroNet,
    examples: &[Example],
    queries: &[Vec<f64>],
    block: &TaskBlock,
    partition: &GroupPartition,
    top_k: usize,
) -> Result<f64> {
    check_inputs(examples, queries)?;
    let mut total = 0.0;
    for (ex, q) in examples.iter().zip(queries) {
        let delta = training_delta(q, block, partition, top_k, None)?;
        total += net.example_loss_and_grads(&ex.tokens, ex.label, &delta)?.0;
    }
    Ok(total / examples.len() as f64)
}

/// Trains the block's increments with its keys frozen.
///
/// Per batch: retrieve for every example, combine, backpropagate, average the
/// gradients over the batch and step only the increments that were retrieved.
/// Similarities are constants here, so keys receive no gradient.
#[allow(clippy::too_many_arguments)]
pub fn finetune_stage(
    net: &MicroNet,
    examples: &[Example],
    queries: &[Vec<f64>],
    block: &mut TaskBlock,
    partition: &GroupPartition,
    cfg: &TrainConfig,
    merged: Option<&KeyValueStore>,
    rng: &mut SeededRng,
) -> Result<FinetuneLog> {
    check_inputs(examples, queries)?;
    if block.groups.iter().flatten().any(|e| !e.frozen) {
        return Err(SlmError::State(format!(
            "keys of task {} must be frozen before fine-tuning",
            block.task_id
        )));
    }
    let merged = match cfg.train_scope {
        TrainScope::Block => None,
        TrainScope::Merged => merged,
    };
    let top_k = cfg.retrieval.top_k;
    let mut optimizer = cfg.optimizer();
    let mut log = FinetuneLog::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..cfg.finetune_epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            log.steps += 1;
            let mut grads = GradMap::new();
            let mut batch_loss = 0.0;
            for &i in batch {
                let delta = training_delta(&queries[i], block, partition, top_k, merged)?;
                let (loss, g) = net.example_loss_and_grads(&examples[i].tokens, examples[i].label, &delta)?;
                batch_loss += loss;
                for (key, grad) in g {
                    accumulate(&mut grads, key, grad)?;
                }
            }
            if !batch_loss.is_finite() {
                return Err(SlmError::Numeric {
                    stage: "finetune".into(),
                    step: log.steps,
                });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            for ((id, layer), mut grad) in grads {
                // Increments of earlier tasks are frozen.
                let Some(set) = block.values.get_mut(&id) else { continue };
                let inc = set
                    .get_mut(layer)
                    .ok_or_else(|| SlmError::Integrity(format!("value {id} has no {layer} increment")))?;
                grad.b.scale(scale);
                grad.a.scale(scale);
                optimizer.step((id, layer), inc, &grad)?;
                if !inc.is_finite() {
                    return Err(SlmError::Numeric {
                        stage: "finetune".into(),
                        step: log.steps,
                    });
                }
                log.updated.insert(id);
            }
        }
        log.epoch_losses.push(epoch_loss / examples.len() as f64);
    }
    Ok(log)
}

/// Fine-tunes one increment set applied with coefficient 1 to every input.
/// This is the naive sequential baseline: no keys, no retrieval.
pub fn finetune_shared(
    net: &MicroNet,
    examples: &[Example],
    values: &mut IncrementSet,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<FinetuneLog> {
    if examples.is_empty() {
        return Err(SlmError::Input("fine-tune stage needs at least one example".into()));
    }
    let id = ValueId(0);
    let mut optimizer = cfg.optimizer();
    let mut log = FinetuneLog::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..cfg.finetune_epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            log.steps += 1;
            let items: Vec<(&[crate::TokenId], usize)> = batch
                .iter()
                .map(|&i| (examples[i].tokens.as_slice(), examples[i].label))
                .collect();
            let (loss, grads) = net.loss_and_grads(&items, &CombinedDelta::single(id, values))?;
            if !loss.is_finite() {
                return Err(SlmError::Numeric {
                    stage: "finetune".into(),
                    step: log.steps,
                });
            }
            epoch_loss += loss * batch.len() as f64;
            for ((_, layer), grad) in grads {
                let inc = values
                    .get_mut(layer)
                    .ok_or_else(|| SlmError::Integrity(format!("shared values have no {layer} increment")))?;
                optimizer.step((id, layer), inc, &grad)?;
            }
            if !values.is_finite() {
                return Err(SlmError::Numeric {
                    stage: "finetune".into(),
                    step: log.steps,
                });
            }
            log.updated.insert(id);
        }
        log.epoch_losses.push(epoch_loss / examples.len() as f64);
    }
    Ok(log)
}
