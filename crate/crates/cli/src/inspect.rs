use std::path::{Path, PathBuf};

use clap::ValueEnum;
use slm_core::harness::{task_retrieval_accuracy, Checkpoint};
use slm_core::tasks::load_suite;
use slm_core::{Result, SlmError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Inspect {
    /// Raw key vectors with group and task labels.
    Keys,
    /// Pairwise key cosine per group.
    Similarity,
    /// Retrieval accuracy per task on the test sets.
    Retrieval,
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| to_error(path, e))
}

fn to_error(path: &Path, e: csv::Error) -> SlmError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => SlmError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => SlmError::Input(format!("{}: {other:?}", path.display())),
    }
}

/// Writes the requested CSV files and returns their paths.
pub fn cmd_inspect(checkpoint: &Path, what: Inspect, data: Option<&Path>, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let out = out.unwrap_or(checkpoint);
    std::fs::create_dir_all(out).map_err(|e| SlmError::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let store = &ckpt.store;
    let mut written = Vec::new();
    match what {
        Inspect::Keys => {
            let path = out.join("keys.csv");
            let mut w = writer(&path)?;
            let mut header = vec!["group".to_string(), "task".into(), "value_id".into()];
            header.extend((0..store.key_dim()).map(|i| format!("k{i}")));
            w.write_record(&header).map_err(|e| to_error(&path, e))?;
            for (g, e) in store.entries() {
                let mut row = vec![g.to_string(), e.task_id.to_string(), e.value_id.0.to_string()];
                row.extend(e.key.iter().map(f64::to_string));
                w.write_record(&row).map_err(|e| to_error(&path, e))?;
            }
            w.flush().map_err(|e| SlmError::Io { path: path.clone(), source: e })?;
            written.push(path);
        }
        Inspect::Similarity => {
            for g in 0..store.groups() {
                let path = out.join(format!("similarity_g{g}.csv"));
                let entries = store.group_entries(g)?;
                let sim = store.similarity_matrix(g)?;
                let mut w = writer(&path)?;
                let mut header = vec!["entry".to_string(), "task".into()];
                header.extend((0..entries.len()).map(|j| format!("e{j}")));
                w.write_record(&header).map_err(|e| to_error(&path, e))?;
                for (i, e) in entries.iter().enumerate() {
                    let mut row = vec![i.to_string(), e.task_id.to_string()];
                    row.extend(sim.row(i).iter().map(f64::to_string));
                    w.write_record(&row).map_err(|e| to_error(&path, e))?;
                }
                w.flush().map_err(|e| SlmError::Io { path: path.clone(), source: e })?;
                written.push(path);
            }
        }
        Inspect::Retrieval => {
            let data = data.ok_or_else(|| SlmError::Input("--data is required for retrieval".into()))?;
            let suite = load_suite(data)?;
            let path = out.join("retrieval.csv");
            let mut w = writer(&path)?;
            w.write_record(["task", "retrieval_accuracy"]).map_err(|e| to_error(&path, e))?;
            for &task in store.tasks() {
                let value = task_retrieval_accuracy(&ckpt.frozen.encoder, store, suite.test_set(task)?)?;
                w.write_record([task.to_string(), value.to_string()])
                    .map_err(|e| to_error(&path, e))?;
            }
            w.flush().map_err(|e| SlmError::Io { path: path.clone(), source: e })?;
            written.push(path);
        }
    }
    Ok(written)
}
