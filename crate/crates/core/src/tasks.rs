//! Synthetic task streams and their JSONL files.
//!
//! Token layout: a shared noise band first, then for every task a contiguous
//! content band followed by its class-marker tokens. Each example holds
//! exactly one marker of its class at a random position; every other position
//! is drawn from the task's content band with probability `1 - noise_rate`,
//! otherwise from the noise band.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, SlmError};
use crate::numerics::SeededRng;
use crate::{TaskId, TokenId};

/// Retries per example before a suite is declared too small to stay disjoint.
const MAX_DRAWS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<TokenId>,
    /// Global class id.
    pub label: usize,
    /// Bookkeeping for metrics; never used to route predictions.
    pub task: TaskId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub n_classes: usize,
    /// First global label of this task.
    pub label_offset: usize,
    pub vocab_band: Range<TokenId>,
    /// One marker set per class.
    pub class_markers: Vec<Vec<TokenId>>,
    pub noise_rate: f64,
    pub n_train: usize,
    pub n_test: usize,
}

impl TaskSpec {
    pub fn label_range(&self) -> Range<usize> {
        self.label_offset..self.label_offset + self.n_classes
    }
}

/// Parameters for generating a suite of identically shaped tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteTemplate {
    pub n_tasks: usize,
    pub classes_per_task: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub seq_len: usize,
    pub noise_rate: f64,
    pub band_size: usize,
    pub noise_band_size: usize,
    pub markers_per_class: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for SuiteTemplate {
    fn default() -> Self {
        Self {
            n_tasks: 4,
            classes_per_task: 2,
            train_size: 1000,
            test_size: 100,
            seq_len: 16,
            noise_rate: 0.3,
            band_size: 8,
            noise_band_size: 8,
            markers_per_class: 1,
            vocab_size: 256,
            seed: 7,
        }
    }
}

impl SuiteTemplate {
    /// Lays out the token bands and label ranges.
    pub fn specs(&self) -> Result<Vec<TaskSpec>> {
        let field = |f: &str, m: &str| SlmError::config(format!("suite.{f}"), m);
        if self.n_tasks == 0 {
            return Err(field("tasks", "must be at least 1"));
        }
        if self.classes_per_task == 0 {
            return Err(field("classes", "must be at least 1"));
        }
        if self.band_size == 0 || self.noise_band_size == 0 || self.markers_per_class == 0 {
            return Err(field("band_size", "bands and marker sets must be nonempty"));
        }
        let per_task = self.band_size + self.classes_per_task * self.markers_per_class;
        let needed = self.noise_band_size + self.n_tasks * per_task;
        if needed > self.vocab_size {
            return Err(SlmError::config(
                "encoder.vocab",
                format!("suite needs {needed} token ids, vocabulary has {}", self.vocab_size),
            ));
        }
        let mut next = self.noise_band_size;
        let mut specs = Vec::with_capacity(self.n_tasks);
        for t in 0..self.n_tasks {
            let band = next as TokenId..(next + self.band_size) as TokenId;
            next += self.band_size;
            let class_markers = (0..self.classes_per_task)
                .map(|_| {
                    let set = (next..next + self.markers_per_class).map(|v| v as TokenId).collect();
                    next += self.markers_per_class;
                    set
                })
                .collect();
            specs.push(TaskSpec {
                task_id: t as TaskId,
                n_classes: self.classes_per_task,
                label_offset: t * self.classes_per_task,
                vocab_band: band,
                class_markers,
                noise_rate: self.noise_rate,
                n_train: self.train_size,
                n_test: self.test_size,
            });
        }
        Ok(specs)
    }

    pub fn noise_band(&self) -> Range<TokenId> {
        0..self.noise_band_size as TokenId
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Suite {
    pub specs: Vec<TaskSpec>,
    pub noise_band: Range<TokenId>,
    pub seq_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// Indexed like `specs`.
    pub train: Vec<Vec<Example>>,
    pub test: Vec<Vec<Example>>,
}

impl Suite {
    pub fn task_ids(&self) -> Vec<TaskId> {
        self.specs.iter().map(|s| s.task_id).collect()
    }

    pub fn n_classes_total(&self) -> usize {
        self.specs.iter().map(|s| s.label_range().end).max().unwrap_or(0)
    }

    fn index_of(&self, task: TaskId) -> Result<usize> {
        self.specs
            .iter()
            .position(|s| s.task_id == task)
            .ok_or_else(|| SlmError::Lookup(format!("task {task} is not in the suite")))
    }

    pub fn spec(&self, task: TaskId) -> Result<&TaskSpec> {
        Ok(&self.specs[self.index_of(task)?])
    }

    pub fn train_set(&self, task: TaskId) -> Result<&[Example]> {
        Ok(&self.train[self.index_of(task)?])
    }

    pub fn test_set(&self, task: TaskId) -> Result<&[Example]> {
        Ok(&self.test[self.index_of(task)?])
    }

    /// Subset containing only `tasks`, in the given order.
    pub fn restrict(&self, tasks: &[TaskId]) -> Result<Suite> {
        let idx = tasks.iter().map(|&t| self.index_of(t)).collect::<Result<Vec<_>>>()?;
        Ok(Suite {
            specs: idx.iter().map(|&i| self.specs[i].clone()).collect(),
            noise_band: self.noise_band.clone(),
            seq_len: self.seq_len,
            vocab_size: self.vocab_size,
            seed: self.seed,
            train: idx.iter().map(|&i| self.train[i].clone()).collect(),
            test: idx.iter().map(|&i| self.test[i].clone()).collect(),
        })
    }
}

pub fn gen_suite(template: &SuiteTemplate) -> Result<Suite> {
    let specs = template.specs()?;
    gen_from_specs(specs, template.noise_band(), template.seq_len, template.vocab_size, template.seed)
}

fn check_layout(specs: &[TaskSpec], noise_band: &Range<TokenId>, vocab_size: usize) -> Result<()> {
    let overlap = |m: String| SlmError::config("suite.bands", m);
    let mut owner: Vec<Option<String>> = vec![None; vocab_size];
    let mut claim = |tok: TokenId, who: String| -> Result<()> {
        let slot = owner.get_mut(tok as usize).ok_or_else(|| {
            SlmError::config("encoder.vocab", format!("token {tok} of {who} is outside the vocabulary"))
        })?;
        if let Some(prev) = slot {
            return Err(overlap(format!("token {tok} is claimed by both {prev} and {who}")));
        }
        *slot = Some(who);
        Ok(())
    };
    for tok in noise_band.clone() {
        claim(tok, "the noise band".into())?;
    }
    let mut seen_tasks = HashSet::new();
    let mut next_label = 0;
    for spec in specs {
        if !seen_tasks.insert(spec.task_id) {
            return Err(SlmError::config("suite.tasks", format!("task {} listed twice", spec.task_id)));
        }
        if spec.vocab_band.is_empty() {
            return Err(SlmError::config("suite.band_size", format!("task {} has an empty band", spec.task_id)));
        }
        if spec.n_classes == 0 || spec.class_markers.len() != spec.n_classes {
            return Err(SlmError::config(
                "suite.classes",
                format!("task {} needs one marker set per class", spec.task_id),
            ));
        }
        if spec.label_offset < next_label {
            return Err(SlmError::config("suite.classes", "task label ranges overlap"));
        }
        next_label = spec.label_range().end;
        if !(0.0..=1.0).contains(&spec.noise_rate) {
            return Err(SlmError::config("suite.noise_rate", "must be in [0, 1]"));
        }
        for tok in spec.vocab_band.clone() {
            claim(tok, format!("task {} band", spec.task_id))?;
        }
        for (c, markers) in spec.class_markers.iter().enumerate() {
            if markers.is_empty() {
                return Err(SlmError::config("suite.markers_per_class", "marker sets must be nonempty"));
            }
            for &tok in markers {
                claim(tok, format!("task {} class {c} marker", spec.task_id))?;
            }
        }
    }
    Ok(())
}

/// Generates train and test splits for explicit task specs.
pub fn gen_from_specs(
    specs: Vec<TaskSpec>,
    noise_band: Range<TokenId>,
    seq_len: usize,
    vocab_size: usize,
    seed: u64,
) -> Result<Suite> {
    if seq_len < 1 {
        return Err(SlmError::config("model.seq_len", "must be at least 1"));
    }
    check_layout(&specs, &noise_band, vocab_size)?;
    let root = SeededRng::new(seed, "suite");
    let mut train = Vec::with_capacity(specs.len());
    let mut test = Vec::with_capacity(specs.len());
    for spec in &specs {
        let mut seen = HashSet::new();
        let mut rng = root.substream(format!("task{}/train", spec.task_id));
        train.push(gen_split(spec, &noise_band, seq_len, spec.n_train, &mut seen, &mut rng)?);
        let mut rng = root.substream(format!("task{}/test", spec.task_id));
        test.push(gen_split(spec, &noise_band, seq_len, spec.n_test, &mut seen, &mut rng)?);
    }
    Ok(Suite {
        specs,
        noise_band,
        seq_len,
        vocab_size,
        seed,
        train,
        test,
    })
}

fn gen_split(
    spec: &TaskSpec,
    noise_band: &Range<TokenId>,
    seq_len: usize,
    n: usize,
    seen: &mut HashSet<Vec<TokenId>>,
    rng: &mut SeededRng,
) -> Result<Vec<Example>> {
    // Round-robin labels, then shuffle: class counts differ by at most one.
    let mut classes: Vec<usize> = (0..n).map(|i| i % spec.n_classes).collect();
    rng.shuffle(&mut classes);
    let band_len = spec.vocab_band.len();
    let noise_len = noise_band.len();
    let mut out = Vec::with_capacity(n);
    for class in classes {
        let markers = &spec.class_markers[class];
        let mut draws = 0;
        let tokens = loop {
            let marker_pos = rng.below(seq_len);
            let tokens: Vec<TokenId> = (0..seq_len)
                .map(|pos| {
                    if pos == marker_pos {
                        markers[rng.below(markers.len())]
                    } else if noise_len > 0 && rng.bernoulli(spec.noise_rate) {
                        noise_band.start + rng.below(noise_len) as TokenId
                    } else {
                        spec.vocab_band.start + rng.below(band_len) as TokenId
                    }
                })
                .collect();
            if seen.insert(tokens.clone()) {
                break tokens;
            }
            draws += 1;
            if draws >= MAX_DRAWS {
                return Err(SlmError::config(
                    "suite.train_size",
                    format!("cannot draw {n} distinct sequences for task {}", spec.task_id),
                ));
            }
        };
        out.push(Example {
            tokens,
            label: spec.label_offset + class,
            task: spec.task_id,
        });
    }
    Ok(out)
}

/// Order in which tasks arrive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskOrder(pub Vec<TaskId>);

impl TaskOrder {
    /// Must be a permutation of `tasks`.
    pub fn validate(&self, tasks: &[TaskId]) -> Result<()> {
        let mut a = self.0.clone();
        let mut b = tasks.to_vec();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(SlmError::config(
                "order",
                format!("{:?} is not a permutation of the suite's tasks {:?}", self.0, tasks),
            ));
        }
        Ok(())
    }
}

pub fn save_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| SlmError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n").map_err(|e| SlmError::io(path, e))?;
    }
    w.flush().map_err(|e| SlmError::io(path, e))
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Example>> {
    let file = fs::File::open(path).map_err(|e| SlmError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| SlmError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1)?);
    }
    Ok(out)
}

/// Parses one JSONL record; `line` is 1-based and only used in errors.
pub fn parse_line(text: &str, line: usize) -> Result<Example> {
    let value: Value = serde_json::from_str(text).map_err(|e| SlmError::Parse {
        line,
        message: e.to_string(),
    })?;
    let schema = |field: &str| SlmError::Schema {
        line,
        field: field.to_string(),
    };
    let obj = value.as_object().ok_or_else(|| schema("tokens"))?;
    let tokens = obj
        .get("tokens")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("tokens"))?
        .iter()
        .map(|t| t.as_u64().and_then(|t| TokenId::try_from(t).ok()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| schema("tokens"))?;
    let label = obj
        .get("label")
        .and_then(Value::as_u64)
        .and_then(|l| usize::try_from(l).ok())
        .ok_or_else(|| schema("label"))?;
    let task = obj
        .get("task")
        .and_then(Value::as_u64)
        .and_then(|t| TaskId::try_from(t).ok())
        .ok_or_else(|| schema("task"))?;
    Ok(Example { tokens, label, task })
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestTask {
    pub task_id: TaskId,
    pub label_range: Range<usize>,
    pub vocab_band: Range<TokenId>,
    pub class_markers: Vec<Vec<TokenId>>,
    pub noise_rate: f64,
    pub train_file: PathBuf,
    pub test_file: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
}

/// Index of a suite written to disk. File paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteManifest {
    pub seed: u64,
    pub seq_len: usize,
    pub vocab_size: usize,
    pub noise_band: Range<TokenId>,
    pub tasks: Vec<ManifestTask>,
}

/// Writes one train and one test file per task plus the manifest; returns the
/// manifest path.
pub fn save_suite(dir: &Path, suite: &Suite) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| SlmError::io(dir, e))?;
    let mut tasks = Vec::with_capacity(suite.specs.len());
    for (i, spec) in suite.specs.iter().enumerate() {
        let train_file = PathBuf::from(format!("task{}_train.jsonl", spec.task_id));
        let test_file = PathBuf::from(format!("task{}_test.jsonl", spec.task_id));
        save_jsonl(&dir.join(&train_file), &suite.train[i])?;
        save_jsonl(&dir.join(&test_file), &suite.test[i])?;
        tasks.push(ManifestTask {
            task_id: spec.task_id,
            label_range: spec.label_range(),
            vocab_band: spec.vocab_band.clone(),
            class_markers: spec.class_markers.clone(),
            noise_rate: spec.noise_rate,
            train_file,
            test_file,
            n_train: suite.train[i].len(),
            n_test: suite.test[i].len(),
        });
    }
    let manifest = SuiteManifest {
        seed: suite.seed,
        seq_len: suite.seq_len,
        vocab_size: suite.vocab_size,
        noise_band: suite.noise_band.clone(),
        tasks,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&path, text).map_err(|e| SlmError::io(&path, e))?;
    Ok(path)
}

/// Reads a suite back from a directory written by [`save_suite`].
pub fn load_suite(dir: &Path) -> Result<Suite> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| SlmError::io(&path, e))?;
    let manifest: SuiteManifest = serde_json::from_str(&text)?;
    let mut specs = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for t in &manifest.tasks {
        let tr = load_jsonl(&dir.join(&t.train_file))?;
        let te = load_jsonl(&dir.join(&t.test_file))?;
        for ex in tr.iter().chain(&te) {
            if ex.task != t.task_id || !t.label_range.contains(&ex.label) {
                return Err(SlmError::Integrity(format!(
                    "example with task {} label {} does not belong to task {}",
                    ex.task, ex.label, t.task_id
                )));
            }
            if let Some(&tok) = ex.tokens.iter().find(|&&tok| tok as usize >= manifest.vocab_size) {
                return Err(SlmError::Index {
                    what: "token",
                    index: tok as usize,
                    len: manifest.vocab_size,
                });
            }
        }
        specs.push(TaskSpec {
            task_id: t.task_id,
            n_classes: t.label_range.len(),
            label_offset: t.label_range.start,
            vocab_band: t.vocab_band.clone(),
            class_markers: t.class_markers.clone(),
            noise_rate: t.noise_rate,
            n_train: tr.len(),
            n_test: te.len(),
        });
        train.push(tr);
        test.push(te);
    }
    check_layout(&specs, &manifest.noise_band, manifest.vocab_size)?;
    Ok(Suite {
        specs,
        noise_band: manifest.noise_band,
        seq_len: manifest.seq_len,
        vocab_size: manifest.vocab_size,
        seed: manifest.seed,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::FrozenEncoder;
    use crate::numerics::dot;
    use std::collections::BTreeMap;

    fn small() -> SuiteTemplate {
        SuiteTemplate {
            train_size: 200,
            test_size: 100,
            ..SuiteTemplate::default()
        }
    }

    #[test]
    fn default_suite_counts() {
        let s = gen_suite(&small()).unwrap();
        assert_eq!(s.train.iter().map(Vec::len).sum::<usize>(), 800);
        assert_eq!(s.test.iter().map(Vec::len).sum::<usize>(), 400);
        let labels: std::collections::BTreeSet<usize> =
            s.train.iter().flatten().map(|e| e.label).collect();
        assert_eq!(labels.into_iter().collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());
        assert_eq!(s.n_classes_total(), 8);
    }

    #[test]
    fn deterministic() {
        assert_eq!(gen_suite(&small()).unwrap(), gen_suite(&small()).unwrap());
        let other = gen_suite(&SuiteTemplate { seed: 8, ..small() }).unwrap();
        assert_ne!(other.train, gen_suite(&small()).unwrap().train);
    }

    #[test]
    fn splits_disjoint_and_balanced() {
        let s = gen_suite(&SuiteTemplate { train_size: 101, test_size: 33, ..small() }).unwrap();
        for (tr, te) in s.train.iter().zip(&s.test) {
            let train_set: HashSet<&Vec<TokenId>> = tr.iter().map(|e| &e.tokens).collect();
            assert!(te.iter().all(|e| !train_set.contains(&e.tokens)));
            for split in [tr, te] {
                let mut counts = BTreeMap::new();
                for e in split {
                    *counts.entry(e.label).or_insert(0usize) += 1;
                }
                let (lo, hi) = (counts.values().min().unwrap(), counts.values().max().unwrap());
                assert!(hi - lo <= 1);
            }
        }
    }

    #[test]
    fn examples_have_one_marker_and_valid_tokens() {
        let s = gen_suite(&small()).unwrap();
        for (spec, split) in s.specs.iter().zip(&s.train) {
            let all_markers: Vec<TokenId> = spec.class_markers.iter().flatten().copied().collect();
            for e in split {
                assert_eq!(e.tokens.len(), 16);
                assert!(spec.label_range().contains(&e.label));
                let own = &spec.class_markers[e.label - spec.label_offset];
                let markers: Vec<_> = e.tokens.iter().filter(|t| all_markers.contains(t)).collect();
                assert_eq!(markers.len(), 1);
                assert!(own.contains(markers[0]));
                for t in &e.tokens {
                    assert!(spec.vocab_band.contains(t) || s.noise_band.contains(t) || own.contains(t));
                }
            }
        }
    }

    #[test]
    fn overlapping_bands_rejected() {
        let mut specs = small().specs().unwrap();
        specs[1].vocab_band = specs[0].vocab_band.clone();
        let err = gen_from_specs(specs, 0..8, 16, 256, 1).unwrap_err();
        assert!(matches!(err, SlmError::Config { ref field, .. } if field == "suite.bands"));
    }

    #[test]
    fn vocabulary_too_small() {
        let err = gen_suite(&SuiteTemplate { vocab_size: 20, ..small() }).unwrap_err();
        assert!(matches!(err, SlmError::Config { ref field, .. } if field == "encoder.vocab"));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = gen_suite(&small()).unwrap();
        let p = dir.path().join("x.jsonl");
        save_jsonl(&p, &s.train[0]).unwrap();
        assert_eq!(load_jsonl(&p).unwrap(), s.train[0]);
        let empty = dir.path().join("e.jsonl");
        fs::write(&empty, "").unwrap();
        assert!(load_jsonl(&empty).unwrap().is_empty());
    }

    #[test]
    fn jsonl_errors_carry_line_numbers() {
        let err = parse_line(r#"{"tokens": [1,2]}"#, 1).unwrap_err();
        assert!(matches!(err, SlmError::Schema { line: 1, ref field } if field == "label"));
        assert!(err.to_string().contains("\"label\""));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        fs::write(&p, "{\"tokens\":[1],\"label\":0,\"task\":0}\n{oops\n").unwrap();
        assert!(matches!(load_jsonl(&p).unwrap_err(), SlmError::Parse { line: 2, .. }));
    }

    #[test]
    fn suite_round_trip_via_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let s = gen_suite(&small()).unwrap();
        let manifest = save_suite(dir.path(), &s).unwrap();
        assert!(manifest.ends_with(MANIFEST_FILE));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 9);
        assert_eq!(load_suite(dir.path()).unwrap(), s);
    }

    #[test]
    fn order_must_be_permutation() {
        assert!(TaskOrder(vec![2, 0, 1]).validate(&[0, 1, 2]).is_ok());
        assert!(TaskOrder(vec![0, 0, 1]).validate(&[0, 1, 2]).is_err());
        assert!(TaskOrder(vec![0, 1]).validate(&[0, 1, 2]).is_err());
    }

    fn mean_cos(a: &[Vec<f64>], b: &[Vec<f64>], same: bool) -> f64 {
        let mut sum = 0.0;
        let mut n = 0;
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                if same && i == j {
                    continue;
                }
                sum += dot(x, y);
                n += 1;
            }
        }
        sum / n as f64
    }

    #[test]
    fn encoder_separates_tasks() {
        let s = gen_suite(&SuiteTemplate { train_size: 200, ..small() }).unwrap();
        let enc = FrozenEncoder::new(256, 64, 7).unwrap();
        let queries: Vec<Vec<Vec<f64>>> = s
            .train
            .iter()
            .map(|split| split.iter().map(|e| enc.encode(&e.tokens).unwrap()).collect())
            .collect();
        let mut intra = 0.0;
        let mut inter = 0.0;
        let m = queries.len();
        for i in 0..m {
            intra += mean_cos(&queries[i], &queries[i], true) / m as f64;
            for j in 0..m {
                if i != j {
                    inter += mean_cos(&queries[i], &queries[j], false) / (m * (m - 1)) as f64;
                }
            }
        }
        assert!(intra - inter >= 0.2, "intra {intra} inter {inter}");
    }

    #[test]
    fn disjoint_regions_have_low_cosine() {
        // Without noise tokens the sequences of different tasks share no ids.
        let s = gen_suite(&SuiteTemplate { noise_rate: 0.0, ..small() }).unwrap();
        let enc = FrozenEncoder::new(256, 64, 7).unwrap();
        let mut rng = SeededRng::new(7, "pairs");
        for _ in 0..100 {
            let a = &s.test[0][rng.below(100)];
            let b = &s.test[1 + rng.below(3)][rng.below(100)];
            let c = dot(&enc.encode(&a.tokens).unwrap(), &enc.encode(&b.tokens).unwrap());
            assert!(c < 0.5, "cos {c}");
        }
    }
}
