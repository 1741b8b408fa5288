use std::fs;
use std::path::Path;
use std::process::Command;

use slm_cli::{cmd_eval, cmd_gen_data, cmd_init_config, cmd_inspect, cmd_train, Inspect, Mode};
use slm_core::harness::{task_retrieval_accuracy, Checkpoint};
use slm_core::run_config::RunConfigFile;
use slm_core::tasks::load_suite;

fn slm(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_slm")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = RunConfigFile::default();
    cfg.suite.tasks = 2;
    cfg.suite.train_size = 200;
    cfg.suite.test_size = 40;
    cfg.order = vec![1, 0];
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

#[test]
fn init_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    cmd_init_config(&path).unwrap();
    assert_eq!(RunConfigFile::load(&path).unwrap(), RunConfigFile::default());
}

#[test]
fn gen_data_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfigFile::default();
    cfg.suite.train_size = 50;
    cfg.suite.test_size = 10;
    let cfg_path = dir.path().join("config.json");
    fs::write(&cfg_path, cfg.to_json().unwrap()).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cmd_gen_data(&cfg_path, &a).unwrap();
    cmd_gen_data(&cfg_path, &b).unwrap();
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 9, "{names:?}");
    assert!(names.contains(&"manifest.json".to_string()));
    for name in &names {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn bad_groups_exit_code_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfigFile::default();
    cfg.retrieval.groups = 3;
    let path = dir.path().join("bad.json");
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    let out = slm(&["gen-data", "--config", path.to_str().unwrap(), "--out", dir.path().join("d").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("retrieval.groups"));
}

#[test]
fn missing_field_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut value: serde_json::Value = serde_json::from_str(&RunConfigFile::default().to_json().unwrap()).unwrap();
    value["train"].as_object_mut().unwrap().remove("batch_size");
    fs::write(&path, value.to_string()).unwrap();
    let out = slm(&["gen-data", "--config", path.to_str().unwrap(), "--out", dir.path().join("d").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.batch_size"));
}

#[test]
fn missing_data_and_checkpoint_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = slm(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        dir.path().join("nope").to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let out = slm(&[
        "eval",
        "--checkpoint",
        dir.path().join("nope").to_str().unwrap(),
        "--data",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn data_from_other_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data");
    cmd_gen_data(&cfg, &data).unwrap();
    let mut other = RunConfigFile::load(&cfg).unwrap();
    other.suite.seed += 1;
    let other_path = dir.path().join("other.json");
    fs::write(&other_path, other.to_json().unwrap()).unwrap();
    let err = cmd_train(&other_path, &data, &dir.path().join("run"), Mode::Slm).unwrap_err();
    assert_eq!(slm_cli::exit_code(&err), 2);
}

#[test]
fn train_eval_inspect_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    cmd_gen_data(&cfg, &data).unwrap();

    let out = slm(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("final average accuracy:"), "{stdout}");
    assert!(stdout.contains("final forgetting:"), "{stdout}");

    let ckpt = Checkpoint::load(&run).unwrap();
    let report = cmd_eval(&run, &data, false, true).unwrap();
    assert_eq!(report.matrix.as_ref().unwrap(), &ckpt.metrics.accuracy);
    assert_eq!(&report.accuracy, ckpt.metrics.accuracy.last().unwrap());
    assert!(run.join("eval.json").exists());
    let ti = cmd_eval(&run, &data, true, false).unwrap();
    assert!(ti.matrix.is_none());
    assert!(run.join("eval_task_id.json").exists());

    let inspect = dir.path().join("inspect");
    let store = &ckpt.store;
    let keys = cmd_inspect(&run, Inspect::Keys, None, Some(&inspect)).unwrap();
    let mut reader = csv::Reader::from_path(&keys[0]).unwrap();
    assert_eq!(reader.headers().unwrap().len(), 3 + store.key_dim());
    assert_eq!(reader.records().count(), store.groups() * store.keys_per_task() * 2);

    let sims = cmd_inspect(&run, Inspect::Similarity, None, Some(&inspect)).unwrap();
    assert_eq!(sims.len(), store.groups());
    for path in &sims {
        let mut reader = csv::Reader::from_path(path).unwrap();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.unwrap();
            let diag: f64 = rec[2 + i].parse().unwrap();
            assert_eq!(diag, 1.0);
        }
    }

    assert!(cmd_inspect(&run, Inspect::Retrieval, None, Some(&inspect)).is_err());
    let ret = cmd_inspect(&run, Inspect::Retrieval, Some(&data), Some(&inspect)).unwrap();
    let suite = load_suite(&data).unwrap();
    let mut reader = csv::Reader::from_path(&ret[0]).unwrap();
    for (rec, &task) in reader.records().zip(store.tasks()) {
        let rec = rec.unwrap();
        assert_eq!(rec[0].parse::<u32>().unwrap(), task);
        let want = task_retrieval_accuracy(&ckpt.frozen.encoder, store, suite.test_set(task).unwrap()).unwrap();
        assert_eq!(rec[1].parse::<f64>().unwrap(), want);
    }
}

#[test]
fn baseline_modes_write_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data");
    cmd_gen_data(&cfg, &data).unwrap();

    let ft = dir.path().join("ft");
    let summary = cmd_train(&cfg, &data, &ft, Mode::Finetune).unwrap();
    assert!(summary.forgetting.is_some());
    for name in ["config.json", "net.json", "baseline_values.json", "metrics.json", "metrics.csv", "timings.json"] {
        assert!(ft.join(name).exists(), "{name}");
    }
    // Only SLM checkpoints can be evaluated.
    assert_eq!(slm_cli::exit_code(&cmd_eval(&ft, &data, false, false).unwrap_err()), 5);

    let sep = dir.path().join("sep");
    let summary = cmd_train(&cfg, &data, &sep, Mode::Separate).unwrap();
    assert!(summary.forgetting.is_none());
    assert!((0.0..=100.0).contains(&summary.average_accuracy));
    assert!(sep.join("metrics.csv").exists());
}

#[test]
fn config_schema_lists_every_field() {
    let schema: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/config-schema.json")).unwrap())
            .unwrap();
    let config: serde_json::Value = serde_json::from_str(&RunConfigFile::default().to_json().unwrap()).unwrap();
    let props = schema["properties"].as_object().unwrap();
    let top = config.as_object().unwrap();
    assert_eq!(props.keys().collect::<Vec<_>>().len(), top.len());
    for (section, value) in top {
        let Some(fields) = value.as_object() else { continue };
        let described = props[section]["properties"].as_object().unwrap();
        let mut a: Vec<&String> = fields.keys().collect();
        let mut b: Vec<&String> = described.keys().collect();
        a.sort();
        b.sort();
        assert_eq!(a, b, "section {section}");
    }
}
