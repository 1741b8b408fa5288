//! Run checkpoint directory.
//!
//! ```text
//! config.json   run configuration snapshot
//! net.json      frozen encoder and base network
//! store.json    merged key-value store
//! metrics.json  accuracy matrix, forgetting, retrieval accuracy
//! metrics.csv   the same as long-form rows
//! timings.json  wall-clock seconds per stage (not deterministic)
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlmError};
use crate::harness::eval::evaluate_store;
use crate::harness::metrics::{MetricRow, RunMetrics, Timings};
use crate::harness::Frozen;
use crate::keystore::KeyValueStore;
use crate::run_config::RunConfigFile;
use crate::tasks::Suite;
use crate::{FrozenEncoder, MicroNet};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.json";
pub const NET_FILE: &str = "net.json";
pub const STORE_FILE: &str = "store.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetFile {
    pub format_version: u32,
    pub encoder: FrozenEncoder,
    pub net: MicroNet,
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| SlmError::io(path, e))
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["checkpoint", "task", "metric", "value"])
        .map_err(|e| csv_error(path, e))?;
    for r in rows {
        let task = r.task.map(|t| t.to_string()).unwrap_or_default();
        w.write_record([r.checkpoint.to_string(), task, r.metric.clone(), r.value.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| SlmError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> SlmError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => SlmError::io(path, io),
        other => SlmError::Input(format!("{}: {other:?}", path.display())),
    }
}

fn read_checkpoint_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| SlmError::Checkpoint(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| SlmError::Checkpoint(format!("{name}: field `{}`: {}", e.path(), e.inner())))
}

/// A trained SLM run as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfigFile,
    pub frozen: Frozen,
    pub store: KeyValueStore,
    pub metrics: RunMetrics,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path, timings: &Timings) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| SlmError::io(dir, e))?;
        write_json(&dir.join(CONFIG_FILE), &self.config)?;
        write_json(
            &dir.join(NET_FILE),
            &NetFile {
                format_version: CHECKPOINT_FORMAT_VERSION,
                encoder: self.frozen.encoder.clone(),
                net: self.frozen.net.clone(),
            },
        )?;
        self.store.save(&dir.join(STORE_FILE))?;
        write_json(&dir.join(METRICS_FILE), &self.metrics)?;
        write_metrics_csv(&dir.join(METRICS_CSV), &self.metrics.rows())?;
        write_json(&dir.join(TIMINGS_FILE), timings)
    }

    /// Loads and cross-checks every file; any defect is a checkpoint error.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(SlmError::Checkpoint(format!("{} is not a checkpoint directory", dir.display())));
        }
        let config: RunConfigFile = read_checkpoint_json(dir, CONFIG_FILE)?;
        config
            .validate()
            .map_err(|e| SlmError::Checkpoint(format!("{CONFIG_FILE}: {e}")))?;
        let net: NetFile = read_checkpoint_json(dir, NET_FILE)?;
        if net.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(SlmError::Checkpoint(format!(
                "{NET_FILE}: unsupported format_version {}",
                net.format_version
            )));
        }
        let frozen = Frozen {
            encoder: net.encoder,
            net: net.net,
        };
        // Parameters must be exactly what the config regenerates.
        if frozen != config.frozen()? {
            return Err(SlmError::Checkpoint(format!(
                "{NET_FILE}: parameters do not match the seeds and sizes in {CONFIG_FILE}"
            )));
        }
        let store = KeyValueStore::load(&dir.join(STORE_FILE)).map_err(|e| match e {
            SlmError::Checkpoint(m) => SlmError::Checkpoint(format!("{STORE_FILE}: {m}")),
            SlmError::Io { path, source } => SlmError::Checkpoint(format!("{}: {source}", path.display())),
            other => SlmError::Checkpoint(format!("{STORE_FILE}: {other}")),
        })?;
        if store.partition().query_dim() != frozen.encoder.query_dim() {
            return Err(SlmError::Checkpoint(format!(
                "{STORE_FILE}: query dimension {} does not match the encoder's {}",
                store.partition().query_dim(),
                frozen.encoder.query_dim()
            )));
        }
        let shapes = frozen.net.layer_shapes();
        for (id, set) in store.values() {
            let ok = set.iter().count() == shapes.len()
                && shapes.iter().all(|s| {
                    set.get(s.layer)
                        .is_some_and(|inc| inc.out_dim() == s.out_dim && inc.in_dim() == s.in_dim)
                });
            if !ok {
                return Err(SlmError::Checkpoint(format!(
                    "{STORE_FILE}: value {id} does not fit the network's adaptable layers"
                )));
            }
        }
        let metrics: RunMetrics = read_checkpoint_json(dir, METRICS_FILE)?;
        if metrics.order.len() != store.tasks().len() || metrics.order.iter().zip(store.tasks()).any(|(a, b)| a != b) {
            return Err(SlmError::Checkpoint(format!(
                "{METRICS_FILE}: task order {:?} does not match the store's {:?}",
                metrics.order,
                store.tasks()
            )));
        }
        Ok(Self {
            config,
            frozen,
            store,
            metrics,
        })
    }

    /// Recomputes the full accuracy matrix by replaying store prefixes.
    pub fn reevaluate(&self, suite: &Suite, use_task_id: bool) -> Result<Vec<Vec<f64>>> {
        let order = self.store.tasks();
        (1..=order.len())
            .map(|n| {
                let prefix = self.store.prefix(n)?;
                evaluate_store(&self.frozen, &prefix, suite, &order[..n], use_task_id)
            })
            .collect()
    }

    /// Accuracy on every stored task with the final store.
    pub fn evaluate_final(&self, suite: &Suite, use_task_id: bool) -> Result<Vec<f64>> {
        evaluate_store(&self.frozen, &self.store, suite, self.store.tasks(), use_task_id)
    }
}
