//! Versioned JSON envelope for a [`KeyValueStore`].
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so save/load is bit-exact. See `docs/checkpoint-schema.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GroupPartition, KeyEntry, KeyValueStore};
use crate::error::{Result, SlmError};
use crate::jare::{IncrementSet, LayerId, LowRankIncrement};
use crate::numerics::Matrix;
use crate::{TaskId, ValueId};

pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncrementFile {
    #[serde(rename = "B")]
    pub b: Matrix,
    #[serde(rename = "A")]
    pub a: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreFile {
    pub format_version: u32,
    pub g: usize,
    pub h: usize,
    #[serde(rename = "K")]
    pub top_k: usize,
    pub keys_per_task: usize,
    pub rank: usize,
    pub tasks: Vec<TaskId>,
    pub entries: Vec<Vec<KeyEntry>>,
    pub values: BTreeMap<ValueId, BTreeMap<LayerId, IncrementFile>>,
}

impl From<&KeyValueStore> for StoreFile {
    fn from(store: &KeyValueStore) -> Self {
        StoreFile {
            format_version: STORE_FORMAT_VERSION,
            g: store.groups(),
            h: store.key_dim(),
            top_k: store.top_k,
            keys_per_task: store.keys_per_task,
            rank: store.rank,
            tasks: store.tasks.clone(),
            entries: store.groups.clone(),
            values: store
                .values
                .iter()
                .map(|(id, set)| {
                    let layers = set
                        .iter()
                        .map(|inc| {
                            (
                                inc.layer,
                                IncrementFile {
                                    b: inc.b.clone(),
                                    a: inc.a.clone(),
                                },
                            )
                        })
                        .collect();
                    (*id, layers)
                })
                .collect(),
        }
    }
}

fn corrupt(msg: impl Into<String>) -> SlmError {
    SlmError::Checkpoint(msg.into())
}

impl TryFrom<StoreFile> for KeyValueStore {
    type Error = SlmError;

    fn try_from(file: StoreFile) -> Result<Self> {
        if file.format_version != STORE_FORMAT_VERSION {
            return Err(corrupt(format!(
                "unsupported format_version {} (expected {STORE_FORMAT_VERSION})",
                file.format_version
            )));
        }
        let partition = GroupPartition::new(file.g, file.g * file.h)
            .map_err(|e| corrupt(format!("bad group layout: {e}")))?;
        if file.entries.len() != file.g {
            return Err(corrupt(format!("entries has {} groups, g = {}", file.entries.len(), file.g)));
        }
        let mut referenced = BTreeSet::new();
        for (g, group) in file.entries.iter().enumerate() {
            for task in &file.tasks {
                let n = group.iter().filter(|e| e.task_id == *task).count();
                if n != file.keys_per_task {
                    return Err(corrupt(format!(
                        "group {g} holds {n} keys for task {task}, expected {}",
                        file.keys_per_task
                    )));
                }
            }
            for e in group {
                if e.key.len() != file.h || !e.key.iter().all(|v| v.is_finite()) {
                    return Err(corrupt(format!("key {} is malformed", e.value_id)));
                }
                if !e.frozen {
                    return Err(corrupt(format!("key {} is not frozen", e.value_id)));
                }
                if !file.tasks.contains(&e.task_id) {
                    return Err(corrupt(format!("key {} names unknown task {}", e.value_id, e.task_id)));
                }
                if !referenced.insert(e.value_id) {
                    return Err(corrupt(format!("value id {} referenced twice", e.value_id)));
                }
                if !file.values.contains_key(&e.value_id) {
                    return Err(corrupt(format!("value id {} has no increment", e.value_id)));
                }
            }
        }
        if referenced.len() != file.values.len() {
            return Err(corrupt("values table holds unreferenced increments"));
        }
        let mut values = BTreeMap::new();
        for (id, layers) in file.values {
            let incs = layers
                .into_iter()
                .map(|(layer, f)| {
                    if f.b.cols() != file.rank {
                        return Err(corrupt(format!("increment {id}/{layer} has rank {}", f.b.cols())));
                    }
                    LowRankIncrement::new(layer, f.b, f.a)
                        .map_err(|e| corrupt(format!("increment {id}/{layer}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            values.insert(id, IncrementSet::new(incs)?);
        }
        let mut store = KeyValueStore::new(partition, file.top_k, file.keys_per_task, file.rank);
        store.groups = file.entries;
        store.values = values;
        store.tasks = file.tasks;
        Ok(store)
    }
}

impl KeyValueStore {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&StoreFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: StoreFile =
            serde_json::from_str(text).map_err(|e| corrupt(format!("store schema: {e}")))?;
        KeyValueStore::try_from(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| SlmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SlmError::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jare::LayerShape;
    use crate::keystore::{update_keys, RetrievalConfig, TaskBlock};
    use crate::numerics::SeededRng;

    fn trained_store() -> KeyValueStore {
        let p = GroupPartition::new(2, 8).unwrap();
        let cfg = RetrievalConfig { groups: 2, top_k: 2, keys_per_task: 3, mask_prob: 0.2, key_lr: 0.1 };
        let shapes = [LayerShape { layer: LayerId::Head, out_dim: 3, in_dim: 5 }];
        let mut store = KeyValueStore::new(p, 2, 3, 2);
        let mut rng = SeededRng::new(1, "q");
        for t in 0..2 {
            let mut b = TaskBlock::init(t, &cfg, &p, &shapes, 2, &SeededRng::new(3, format!("b{t}"))).unwrap();
            for _ in 0..5 {
                let q: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
                update_keys(&q, &mut b, &p, &cfg, &mut rng).unwrap();
            }
            for set in b.values.values_mut() {
                for inc in set.iter_mut() {
                    inc.b = Matrix::from_fn(3, 2, |i, j| 0.1 * (i as f64 + 1.0) / (j as f64 + 3.0) + 1e-17);
                }
            }
            store.merge(b).unwrap();
        }
        store
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let store = trained_store();
        let back = KeyValueStore::from_json(&store.to_json().unwrap()).unwrap();
        assert_eq!(store, back);
        let mut rng = SeededRng::new(9, "probe");
        for _ in 0..20 {
            let q: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            assert_eq!(store.retrieve(&q, 2, None).unwrap(), back.retrieve(&q, 2, None).unwrap());
        }
        assert_eq!(store.to_json().unwrap(), back.to_json().unwrap());
    }

    #[test]
    fn rejects_wrong_version_and_dangling_values() {
        let store = trained_store();
        let mut file = StoreFile::from(&store);
        file.format_version = 2;
        assert!(matches!(KeyValueStore::try_from(file), Err(SlmError::Checkpoint(_))));
        let mut file = StoreFile::from(&store);
        let first = *file.values.keys().next().unwrap();
        file.values.remove(&first);
        assert!(matches!(KeyValueStore::try_from(file), Err(SlmError::Checkpoint(_))));
        assert!(matches!(KeyValueStore::from_json("{\"format_version\":1}"), Err(SlmError::Checkpoint(_))));
    }
}
