use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlmError};
use crate::harness::eval::{accuracy, baseline_accuracy, evaluate_store, task_retrieval_accuracy};
use crate::harness::metrics::{BoundMetrics, RunMetrics, TaskValue, Timings};
use crate::harness::stages::{finetune_shared, finetune_stage, preparation_stage, FinetuneLog, PrepLog};
use crate::harness::TrainConfig;
use crate::jare::IncrementSet;
use crate::keystore::{GroupPartition, KeyValueStore, TaskBlock};
use crate::model::MicroNet;
use crate::numerics::SeededRng;
use crate::tasks::{Example, Suite, TaskOrder};
use crate::{FrozenEncoder, TaskId};

/// The frozen parts of a run: query encoder and base network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frozen {
    pub encoder: FrozenEncoder,
    pub net: MicroNet,
}

impl Frozen {
    pub fn digest(&self) -> String {
        format!("{}:{}", self.encoder.digest(), self.net.digest())
    }
}

#[derive(Clone, Debug)]
pub struct ContinualRun {
    pub store: KeyValueStore,
    pub metrics: RunMetrics,
    pub timings: Timings,
    pub logs: Vec<(TaskId, PrepLog, FinetuneLog)>,
}

#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub values: IncrementSet,
    pub metrics: RunMetrics,
    pub timings: Timings,
}

#[derive(Clone, Debug)]
pub struct SeparateRun {
    pub metrics: BoundMetrics,
    pub timings: Timings,
}

fn encode_all(encoder: &FrozenEncoder, examples: &[Example]) -> Result<Vec<Vec<f64>>> {
    examples.iter().map(|ex| encoder.encode(&ex.tokens)).collect()
}

fn check_setup(frozen: &Frozen, suite: &Suite, cfg: &TrainConfig) -> Result<GroupPartition> {
    cfg.validate()?;
    if suite.n_classes_total() > frozen.net.n_classes() {
        return Err(SlmError::config(
            "suite.classes",
            format!(
                "suite uses {} labels but the network has {} outputs",
                suite.n_classes_total(),
                frozen.net.n_classes()
            ),
        ));
    }
    if suite.vocab_size > frozen.encoder.vocab_size() || suite.vocab_size > frozen.net.config().vocab_size {
        return Err(SlmError::config("encoder.vocab", "suite vocabulary exceeds the model's"));
    }
    cfg.retrieval.validate(frozen.encoder.query_dim())
}

/// Seeded streams depend only on the run seed and the task id, so a task's
/// block comes out the same whether trained in sequence or on its own.
fn train_block(
    frozen: &Frozen,
    suite: &Suite,
    task: TaskId,
    cfg: &TrainConfig,
    partition: &GroupPartition,
    merged: Option<&KeyValueStore>,
    timings: &mut Timings,
) -> Result<(TaskBlock, PrepLog, FinetuneLog)> {
    let root = SeededRng::new(cfg.seed, "train");
    let mut block = TaskBlock::init(
        task,
        &cfg.retrieval,
        partition,
        &frozen.net.layer_shapes(),
        cfg.rank,
        &root.substream(format!("block/{task}")),
    )?;
    let train = suite.train_set(task)?;
    let queries = encode_all(&frozen.encoder, train)?;

    let start = Instant::now();
    let prep = preparation_stage(&queries, &mut block, partition, cfg, &mut root.substream(format!("prep/{task}")))?;
    timings.record(task, "preparation", start);

    let start = Instant::now();
    let fine = finetune_stage(
        &frozen.net,
        train,
        &queries,
        &mut block,
        partition,
        cfg,
        merged,
        &mut root.substream(format!("finetune/{task}")),
    )?;
    timings.record(task, "finetune", start);
    Ok((block, prep, fine))
}

/// Sequential training through `order`, evaluating all seen tasks after every
/// merge.
pub fn train_continual(frozen: &Frozen, suite: &Suite, order: &TaskOrder, cfg: &TrainConfig) -> Result<ContinualRun> {
    let partition = check_setup(frozen, suite, cfg)?;
    order.validate(&suite.task_ids())?;
    let mut store = KeyValueStore::new(partition, cfg.retrieval.top_k, cfg.retrieval.keys_per_task, cfg.rank);
    let mut timings = Timings::default();
    let mut logs = Vec::new();
    let mut matrix = Vec::new();
    for (l, &task) in order.0.iter().enumerate() {
        let (block, prep, fine) = train_block(frozen, suite, task, cfg, &partition, Some(&store), &mut timings)?;
        store.merge(block)?;
        logs.push((task, prep, fine));
        let start = Instant::now();
        matrix.push(evaluate_store(frozen, &store, suite, &order.0[..=l], false)?);
        timings.record(task, "evaluation", start);
    }
    let mut metrics = RunMetrics::from_matrix("slm", order.0.clone(), matrix)?;
    metrics.retrieval_accuracy = order
        .0
        .iter()
        .map(|&task| {
            Ok(TaskValue {
                task,
                value: task_retrieval_accuracy(&frozen.encoder, &store, suite.test_set(task)?)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ContinualRun {
        store,
        metrics,
        timings,
        logs,
    })
}

/// One increment set shared by all tasks, fine-tuned task after task.
pub fn baseline_finetune(frozen: &Frozen, suite: &Suite, order: &TaskOrder, cfg: &TrainConfig) -> Result<BaselineRun> {
    check_setup(frozen, suite, cfg)?;
    order.validate(&suite.task_ids())?;
    let root = SeededRng::new(cfg.seed, "train");
    let mut values = IncrementSet::init(&frozen.net.layer_shapes(), cfg.rank, &root.substream("baseline/values"))?;
    let mut timings = Timings::default();
    let mut matrix = Vec::new();
    for (l, &task) in order.0.iter().enumerate() {
        let start = Instant::now();
        finetune_shared(
            &frozen.net,
            suite.train_set(task)?,
            &mut values,
            cfg,
            &mut root.substream(format!("baseline/finetune/{task}")),
        )?;
        timings.record(task, "finetune", start);
        let row = order.0[..=l]
            .iter()
            .map(|&t| baseline_accuracy(frozen, &values, suite.test_set(t)?))
            .collect::<Result<Vec<_>>>()?;
        matrix.push(row);
    }
    Ok(BaselineRun {
        values,
        metrics: RunMetrics::from_matrix("finetune", order.0.clone(), matrix)?,
        timings,
    })
}

/// Trains every task's block in isolation and scores it on its own test set.
pub fn separate_finetune_bound(frozen: &Frozen, suite: &Suite, cfg: &TrainConfig) -> Result<SeparateRun> {
    let partition = check_setup(frozen, suite, cfg)?;
    let mut timings = Timings::default();
    let mut per_task = Vec::new();
    for task in suite.task_ids() {
        let (block, _, _) = train_block(frozen, suite, task, cfg, &partition, None, &mut timings)?;
        let mut store = KeyValueStore::new(partition, cfg.retrieval.top_k, cfg.retrieval.keys_per_task, cfg.rank);
        store.merge(block)?;
        per_task.push(TaskValue {
            task,
            value: accuracy(frozen, &store, suite.test_set(task)?, false)?,
        });
    }
    let mean_accuracy = per_task.iter().map(|v| v.value).sum::<f64>() / per_task.len() as f64;
    Ok(SeparateRun {
        metrics: BoundMetrics {
            mode: "separate".into(),
            accuracy: per_task,
            mean_accuracy,
        },
        timings,
    })
}
