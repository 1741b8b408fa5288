use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use slm_core::harness::{
    baseline_finetune, separate_finetune_bound, train_continual, write_json, write_metrics_csv, Checkpoint, NetFile,
    CHECKPOINT_FORMAT_VERSION, CONFIG_FILE, METRICS_CSV, METRICS_FILE, NET_FILE, TIMINGS_FILE,
};
use slm_core::run_config::RunConfigFile;
use slm_core::tasks::{gen_suite, load_suite, save_suite, Suite};
use slm_core::{Result, SlmError, TaskId};

use crate::Mode;

pub const BASELINE_FILE: &str = "baseline_values.json";

pub fn cmd_init_config(path: &Path) -> Result<()> {
    fs::write(path, RunConfigFile::default().to_json()?).map_err(|e| SlmError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Generates the suite and returns the manifest path.
pub fn cmd_gen_data(config: &Path, out: &Path) -> Result<PathBuf> {
    let cfg = RunConfigFile::load(config)?;
    let suite = gen_suite(&cfg.suite_template())?;
    save_suite(out, &suite)
}

/// Loads the suite and checks it is the one `cfg` generates.
fn load_matching_suite(cfg: &RunConfigFile, data: &Path) -> Result<Suite> {
    let suite = load_suite(data)?;
    let template = cfg.suite_template();
    let expected = template.specs()?;
    let matches = suite.seed == template.seed
        && suite.seq_len == template.seq_len
        && suite.vocab_size == template.vocab_size
        && suite.noise_band == template.noise_band()
        && suite.specs == expected;
    if !matches {
        return Err(SlmError::Config {
            field: "suite".into(),
            message: format!("{} was generated from a different suite configuration", data.display()),
        });
    }
    Ok(suite)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub average_accuracy: f64,
    pub forgetting: Option<f64>,
}

pub fn cmd_train(config: &Path, data: &Path, out: &Path, mode: Mode) -> Result<TrainSummary> {
    let cfg = RunConfigFile::load(config)?;
    let suite = load_matching_suite(&cfg, data)?;
    let frozen = cfg.frozen()?;
    let train = cfg.train_config();
    let order = cfg.task_order();
    fs::create_dir_all(out).map_err(|e| SlmError::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    match mode {
        Mode::Slm => {
            let run = train_continual(&frozen, &suite, &order, &train)?;
            let summary = TrainSummary {
                average_accuracy: run.metrics.final_average_accuracy(),
                forgetting: run.metrics.final_forgetting(),
            };
            Checkpoint {
                config: cfg,
                frozen,
                store: run.store,
                metrics: run.metrics,
            }
            .save(out, &run.timings)?;
            Ok(summary)
        }
        Mode::Finetune => {
            let run = baseline_finetune(&frozen, &suite, &order, &train)?;
            write_json(&out.join(CONFIG_FILE), &cfg)?;
            write_json(
                &out.join(NET_FILE),
                &NetFile {
                    format_version: CHECKPOINT_FORMAT_VERSION,
                    encoder: frozen.encoder,
                    net: frozen.net,
                },
            )?;
            write_json(&out.join(BASELINE_FILE), &run.values)?;
            write_json(&out.join(METRICS_FILE), &run.metrics)?;
            write_metrics_csv(&out.join(METRICS_CSV), &run.metrics.rows())?;
            write_json(&out.join(TIMINGS_FILE), &run.timings)?;
            Ok(TrainSummary {
                average_accuracy: run.metrics.final_average_accuracy(),
                forgetting: run.metrics.final_forgetting(),
            })
        }
        Mode::Separate => {
            let run = separate_finetune_bound(&frozen, &suite, &train)?;
            write_json(&out.join(CONFIG_FILE), &cfg)?;
            write_json(&out.join(METRICS_FILE), &run.metrics)?;
            write_metrics_csv(&out.join(METRICS_CSV), &run.metrics.rows())?;
            write_json(&out.join(TIMINGS_FILE), &run.timings)?;
            Ok(TrainSummary {
                average_accuracy: run.metrics.mean_accuracy,
                forgetting: None,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub use_task_id: bool,
    pub tasks: Vec<TaskId>,
    /// Final-store accuracy per task, percent.
    pub accuracy: Vec<f64>,
    pub average_accuracy: f64,
    /// Every checkpoint's row, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

/// Evaluates an SLM checkpoint and writes `eval.json` (or
/// `eval_task_id.json`) next to it.
pub fn cmd_eval(checkpoint: &Path, data: &Path, use_task_id: bool, matrix: bool) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let suite = load_matching_suite(&ckpt.config, data)?;
    let accuracy = ckpt.evaluate_final(&suite, use_task_id)?;
    let report = EvalReport {
        use_task_id,
        tasks: ckpt.store.tasks().to_vec(),
        average_accuracy: accuracy.iter().sum::<f64>() / accuracy.len() as f64,
        accuracy,
        matrix: if matrix {
            Some(ckpt.reevaluate(&suite, use_task_id)?)
        } else {
            None
        },
    };
    let name = if use_task_id { "eval_task_id.json" } else { "eval.json" };
    write_json(&checkpoint.join(name), &report)?;
    Ok(report)
}
