#![allow(dead_code)]

use slm_core::harness::Frozen;
use slm_core::run_config::RunConfigFile;
use slm_core::tasks::{gen_suite, Suite};

/// Default configuration with every seed shifted by `offset`.
pub fn config(offset: u64) -> RunConfigFile {
    let mut cfg = RunConfigFile::default();
    cfg.encoder.seed += offset;
    cfg.model.seed += offset;
    cfg.train.seed += offset;
    cfg.suite.seed += offset;
    cfg
}

pub fn setup(cfg: &RunConfigFile) -> (Frozen, Suite) {
    (cfg.frozen().unwrap(), gen_suite(&cfg.suite_template()).unwrap())
}

/// A two-task configuration small enough for quick pipeline checks.
pub fn small(offset: u64) -> RunConfigFile {
    let mut cfg = config(offset);
    cfg.suite.tasks = 2;
    cfg.suite.train_size = 300;
    cfg.suite.test_size = 60;
    cfg.order = vec![0, 1];
    cfg
}
