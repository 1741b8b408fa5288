use serde::{Deserialize, Serialize};

use crate::error::{Result, SlmError};
use crate::TaskId;

/// Forgetting after checkpoint `t` (1-based):
/// `F = mean_{j<t} ( max_{j≤l<t} a[l][j] − a[t][j] )`.
///
/// Rows are checkpoints and columns tasks in arrival order; row `l` holds at
/// least `l` entries. Negative values (backward transfer) are kept.
pub fn forgetting(a: &[Vec<f64>], t: usize) -> Result<f64> {
    if t < 2 {
        return Err(SlmError::Domain(format!("forgetting needs checkpoint t >= 2, got {t}")));
    }
    if a.len() < t {
        return Err(SlmError::Domain(format!("accuracy matrix has {} rows, need {t}", a.len())));
    }
    for (l, row) in a.iter().take(t).enumerate() {
        if row.len() < l + 1 {
            return Err(SlmError::Domain(format!("row {} has {} entries, need {}", l + 1, row.len(), l + 1)));
        }
    }
    let mut total = 0.0;
    for j in 0..t - 1 {
        let best = (j..t - 1).map(|l| a[l][j]).fold(f64::NEG_INFINITY, f64::max);
        total += best - a[t - 1][j];
    }
    Ok(total / (t - 1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskValue {
    pub task: TaskId,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointValue {
    /// 1-based number of tasks trained so far.
    pub checkpoint: usize,
    pub value: f64,
}

/// One long-form row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub checkpoint: usize,
    pub task: Option<TaskId>,
    pub metric: String,
    pub value: f64,
}

/// Everything reported for a sequential run. Deterministic given the config;
/// wall-clock numbers live in [`Timings`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetrics {
    pub mode: String,
    pub order: Vec<TaskId>,
    /// `accuracy[l][j]`: percent on task `order[j]` after training through
    /// `order[l]`; lower-triangular.
    pub accuracy: Vec<Vec<f64>>,
    pub average_accuracy: Vec<CheckpointValue>,
    pub forgetting: Vec<CheckpointValue>,
    /// Final-store retrieval accuracy per task; empty for runs without a store.
    pub retrieval_accuracy: Vec<TaskValue>,
}

impl RunMetrics {
    pub fn from_matrix(mode: &str, order: Vec<TaskId>, accuracy: Vec<Vec<f64>>) -> Result<Self> {
        let average_accuracy = accuracy
            .iter()
            .enumerate()
            .map(|(l, row)| CheckpointValue {
                checkpoint: l + 1,
                value: row.iter().sum::<f64>() / row.len() as f64,
            })
            .collect();
        let forgetting = (2..=accuracy.len())
            .map(|t| {
                Ok(CheckpointValue {
                    checkpoint: t,
                    value: forgetting(&accuracy, t)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            mode: mode.to_string(),
            order,
            accuracy,
            average_accuracy,
            forgetting,
            retrieval_accuracy: Vec::new(),
        })
    }

    pub fn final_average_accuracy(&self) -> f64 {
        self.average_accuracy.last().map_or(f64::NAN, |v| v.value)
    }

    /// `None` when only one task was trained.
    pub fn final_forgetting(&self) -> Option<f64> {
        self.forgetting.last().map(|v| v.value)
    }

    pub fn mean_retrieval_accuracy(&self) -> Option<f64> {
        if self.retrieval_accuracy.is_empty() {
            return None;
        }
        Some(self.retrieval_accuracy.iter().map(|v| v.value).sum::<f64>() / self.retrieval_accuracy.len() as f64)
    }

    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        for (l, row) in self.accuracy.iter().enumerate() {
            for (j, &value) in row.iter().enumerate() {
                rows.push(MetricRow {
                    checkpoint: l + 1,
                    task: Some(self.order[j]),
                    metric: "accuracy".into(),
                    value,
                });
            }
        }
        for (name, series) in [("average_accuracy", &self.average_accuracy), ("forgetting", &self.forgetting)] {
            rows.extend(series.iter().map(|v| MetricRow {
                checkpoint: v.checkpoint,
                task: None,
                metric: name.to_string(),
                value: v.value,
            }));
        }
        let last = self.accuracy.len();
        rows.extend(self.retrieval_accuracy.iter().map(|v| MetricRow {
            checkpoint: last,
            task: Some(v.task),
            metric: "retrieval_accuracy".into(),
            value: v.value,
        }));
        rows
    }
}

/// Per-task accuracy of independently trained blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundMetrics {
    pub mode: String,
    pub accuracy: Vec<TaskValue>,
    pub mean_accuracy: f64,
}

impl BoundMetrics {
    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows: Vec<MetricRow> = self
            .accuracy
            .iter()
            .map(|v| MetricRow {
                checkpoint: 1,
                task: Some(v.task),
                metric: "accuracy".into(),
                value: v.value,
            })
            .collect();
        rows.push(MetricRow {
            checkpoint: 1,
            task: None,
            metric: "average_accuracy".into(),
            value: self.mean_accuracy,
        });
        rows
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub task: TaskId,
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<StageTiming>,
}

impl Timings {
    pub(crate) fn record(&mut self, task: TaskId, stage: &str, start: std::time::Instant) {
        self.stages.push(StageTiming {
            task,
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
}
