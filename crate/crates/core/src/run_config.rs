//! The JSON run configuration shared by every command.
//!
//! Every seed is a required field, so a config file fully determines a run.
//! Errors name the offending field as a dotted path (`retrieval.groups`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlmError};
use crate::harness::{Frozen, OptimizerKind, TrainConfig, TrainScope};
use crate::jare::LayerId;
use crate::keystore::RetrievalConfig;
use crate::model::{MicroNet, MicroNetConfig};
use crate::tasks::{SuiteTemplate, TaskOrder};
use crate::{FrozenEncoder, TaskId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub vocab: usize,
    /// Query dimension.
    pub c: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_m: usize,
    pub seq_len: usize,
    pub adaptable_layers: Vec<LayerId>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    pub groups: usize,
    pub top_k: usize,
    pub keys_per_task: usize,
    pub rank: usize,
    pub mask_prob: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub prep_lr: f64,
    pub finetune_lr: f64,
    pub prep_epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    #[serde(default = "one")]
    pub lr_multiplier: f64,
    #[serde(default)]
    pub train_scope: TrainScope,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSection {
    pub tasks: usize,
    pub classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub noise_rate: f64,
    pub band_size: usize,
    pub noise_band_size: usize,
    pub markers_per_class: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub encoder: EncoderSection,
    pub model: ModelSection,
    pub retrieval: RetrievalSection,
    pub train: TrainSection,
    pub suite: SuiteSection,
    pub order: Vec<TaskId>,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        let train = TrainConfig::default();
        let suite = SuiteTemplate::default();
        Self {
            encoder: EncoderSection {
                vocab: suite.vocab_size,
                c: 64,
                seed: 11,
            },
            model: ModelSection {
                d_m: 32,
                seq_len: suite.seq_len,
                adaptable_layers: vec![LayerId::AttnOut, LayerId::Head],
                seed: 13,
            },
            retrieval: RetrievalSection {
                groups: train.retrieval.groups,
                top_k: train.retrieval.top_k,
                keys_per_task: train.retrieval.keys_per_task,
                rank: train.rank,
                mask_prob: train.retrieval.mask_prob,
            },
            train: TrainSection {
                prep_lr: train.retrieval.key_lr,
                finetune_lr: train.finetune_lr,
                prep_epochs: train.prep_epochs,
                finetune_epochs: train.finetune_epochs,
                batch_size: train.batch_size,
                weight_decay: train.weight_decay,
                optimizer: train.optimizer,
                lr_multiplier: train.lr_multiplier,
                train_scope: train.train_scope,
                seed: train.seed,
            },
            suite: SuiteSection {
                tasks: suite.n_tasks,
                classes: suite.classes_per_task,
                train_size: suite.train_size,
                test_size: suite.test_size,
                noise_rate: suite.noise_rate,
                band_size: suite.band_size,
                noise_band_size: suite.noise_band_size,
                markers_per_class: suite.markers_per_class,
                seed: suite.seed,
            },
            order: (0..suite.n_tasks as TaskId).collect(),
        }
    }
}

impl RunConfigFile {
    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.inner().to_string();
            // Missing fields are reported at their parent; point at the field itself.
            let field = match message.strip_prefix("missing field `").and_then(|m| m.split('`').next()) {
                Some(name) if path == "." => name.to_string(),
                Some(name) => format!("{path}.{name}"),
                None => path,
            };
            SlmError::Config { field, message }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SlmError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.c == 0 {
            return Err(SlmError::config("encoder.c", "must be positive"));
        }
        if self.encoder.vocab == 0 {
            return Err(SlmError::config("encoder.vocab", "must be positive"));
        }
        if self.model.d_m == 0 {
            return Err(SlmError::config("model.d_m", "must be positive"));
        }
        if self.model.adaptable_layers.is_empty() {
            return Err(SlmError::config("model.adaptable_layers", "must name at least one layer"));
        }
        if self.retrieval.groups == 0 || !self.encoder.c.is_multiple_of(self.retrieval.groups) {
            return Err(SlmError::config(
                "retrieval.groups",
                format!("{} does not divide the query dimension c = {}", self.retrieval.groups, self.encoder.c),
            ));
        }
        let train = self.train_config();
        train.retrieval.validate(self.encoder.c)?;
        train.validate()?;
        let max_rank = self.model.d_m.min(self.n_classes());
        if self.retrieval.rank > max_rank {
            return Err(SlmError::config(
                "retrieval.rank",
                format!("must not exceed min(d_m, total classes) = {max_rank}"),
            ));
        }
        let template = self.suite_template();
        let specs = template.specs()?;
        if template.seq_len == 0 {
            return Err(SlmError::config("model.seq_len", "must be positive"));
        }
        if template.train_size == 0 || template.test_size == 0 {
            return Err(SlmError::config("suite.train_size", "train and test sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&template.noise_rate) {
            return Err(SlmError::config("suite.noise_rate", "must be in [0, 1]"));
        }
        let ids: Vec<TaskId> = specs.iter().map(|s| s.task_id).collect();
        self.task_order().validate(&ids)
    }

    pub fn n_classes(&self) -> usize {
        self.suite.tasks * self.suite.classes
    }

    pub fn suite_template(&self) -> SuiteTemplate {
        SuiteTemplate {
            n_tasks: self.suite.tasks,
            classes_per_task: self.suite.classes,
            train_size: self.suite.train_size,
            test_size: self.suite.test_size,
            seq_len: self.model.seq_len,
            noise_rate: self.suite.noise_rate,
            band_size: self.suite.band_size,
            noise_band_size: self.suite.noise_band_size,
            markers_per_class: self.suite.markers_per_class,
            vocab_size: self.encoder.vocab,
            seed: self.suite.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            retrieval: RetrievalConfig {
                groups: self.retrieval.groups,
                top_k: self.retrieval.top_k,
                keys_per_task: self.retrieval.keys_per_task,
                mask_prob: self.retrieval.mask_prob,
                key_lr: self.train.prep_lr,
            },
            rank: self.retrieval.rank,
            prep_epochs: self.train.prep_epochs,
            finetune_lr: self.train.finetune_lr,
            lr_multiplier: self.train.lr_multiplier,
            finetune_epochs: self.train.finetune_epochs,
            batch_size: self.train.batch_size,
            optimizer: self.train.optimizer,
            weight_decay: self.train.weight_decay,
            train_scope: self.train.train_scope,
            seed: self.train.seed,
        }
    }

    pub fn task_order(&self) -> TaskOrder {
        TaskOrder(self.order.clone())
    }

    pub fn frozen(&self) -> Result<Frozen> {
        Ok(Frozen {
            encoder: FrozenEncoder::new(self.encoder.vocab, self.encoder.c, self.encoder.seed)?,
            net: MicroNet::new(MicroNetConfig {
                vocab_size: self.encoder.vocab,
                model_dim: self.model.d_m,
                n_classes: self.n_classes(),
                adaptable_layers: self.model.adaptable_layers.clone(),
                seed: self.model.seed,
            })?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(text: &str) -> String {
        match RunConfigFile::parse(text).unwrap_err() {
            SlmError::Config { field, .. } => field,
            other => panic!("unexpected {other:?}"),
        }
    }

    fn edited(f: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v = serde_json::to_value(RunConfigFile::default()).unwrap();
        f(&mut v);
        v.to_string()
    }

    #[test]
    fn default_round_trips() {
        let cfg = RunConfigFile::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfigFile::parse(&cfg.to_json().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn groups_must_divide_c() {
        assert_eq!(field_of(&edited(|v| v["retrieval"]["groups"] = 3.into())), "retrieval.groups");
    }

    #[test]
    fn missing_seed_is_named() {
        let text = edited(|v| {
            v["train"].as_object_mut().unwrap().remove("seed");
        });
        assert_eq!(field_of(&text), "train.seed");
        let text = edited(|v| {
            v.as_object_mut().unwrap().remove("order");
        });
        assert_eq!(field_of(&text), "order");
    }

    #[test]
    fn wrong_type_names_path() {
        assert_eq!(field_of(&edited(|v| v["retrieval"]["top_k"] = "two".into())), "retrieval.top_k");
        assert_eq!(field_of(&edited(|v| v["model"]["adaptable_layers"][0] = "ffn".into())), "model.adaptable_layers[0]");
    }

    #[test]
    fn unknown_field_rejected() {
        assert_eq!(field_of(&edited(|v| v["train"]["momentum"] = 0.9.into())), "train.momentum");
    }

    #[test]
    fn semantic_checks() {
        assert_eq!(field_of(&edited(|v| v["retrieval"]["top_k"] = 5.into())), "retrieval.top_k");
        assert_eq!(field_of(&edited(|v| v["retrieval"]["rank"] = 9.into())), "retrieval.rank");
        assert_eq!(field_of(&edited(|v| v["order"] = serde_json::json!([0, 1, 2]))), "order");
        assert_eq!(field_of(&edited(|v| v["retrieval"]["mask_prob"] = 1.5.into())), "retrieval.mask_prob");
    }

    #[test]
    fn builds_components() {
        let cfg = RunConfigFile::default();
        let frozen = cfg.frozen().unwrap();
        assert_eq!(frozen.net.n_classes(), 8);
        assert_eq!(frozen.encoder.query_dim(), 64);
        assert_eq!(cfg.train_config(), TrainConfig::default());
    }
}
