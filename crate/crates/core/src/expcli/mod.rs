//! Experiment plumbing: TOML configs with includes, derived seeds, the
//! gen → train/eval → clocks → dissect pipeline, run manifests and sweeps.

mod config;
mod io;
mod manifest;
mod run;
mod sweep;

pub use config::{
    derive_seed, merge, set_dotted, sha256_file, stage, BasinRequest, DatasetConfig, DissectConfig, EvalConfig,
    ExperimentConfig, FieldRequest, ModelConfig, ModelKind, OnsetConfig, SamplerConfig, SaveWhen, SeedOverrides,
    SpectrumRequest,
};
pub use io::{
    read_batch, read_points, read_snapshots, write_batch, write_snapshots, BatchSidecar, CeTable, SnapshotRecord,
    MANIFEST_FILE, SNAPSHOTS_FILE,
};
pub use manifest::{FileEntry, RunManifest, RunStatus, StageTime};
pub use run::{clocks_for, open_run, run_experiment, OpenedRun, RunOptions, RunOutcome, CLOCKS_FILE};
pub use sweep::{parse_axis, sweep, sweep_configs, write_summary, SweepRow, SweepSummary};

use crate::error::{Error, Result};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "LAB_THREADS";

/// Thread count from `LAB_THREADS`, if set.
pub fn thread_limit() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::config(THREADS_ENV, format!("expected a positive integer, got {s:?}"))),
        },
    }
}

/// Installs the global rayon pool honoring `LAB_THREADS`. Later calls are
/// no-ops.
pub fn init_threads() -> Result<()> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_limit()? {
        b = b.num_threads(n);
    }
    let _ = b.build_global();
    Ok(())
}
