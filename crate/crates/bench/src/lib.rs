//! Fixtures shared by the criterion benches.

use slm_core::harness::{train_continual, ContinualRun, Frozen};
use slm_core::run_config::RunConfigFile;
use slm_core::tasks::{gen_suite, Suite};

/// A trained default-size store plus the inputs that produced it.
pub fn trained_default() -> (Frozen, Suite, ContinualRun) {
    let mut cfg = RunConfigFile::default();
    cfg.suite.train_size = 200;
    let frozen = cfg.frozen().expect("default config is valid");
    let suite = gen_suite(&cfg.suite_template()).expect("default suite");
    let run = train_continual(&frozen, &suite, &cfg.task_order(), &cfg.train_config()).expect("training");
    (frozen, suite, run)
}
