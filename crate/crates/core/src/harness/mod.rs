//! Operational shell: configuration, corpus ingestion, training and sweep
//! orchestration, JSONL run logs, checkpoints, and CSV/SVG reports.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod report;
pub mod sweep;
pub mod svg;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use corpus::{ingest_corpus, synthetic_corpus, Corpus, EOS_TOKEN};
pub use report::{emit_report, load_runs, run_records, ReportMode, ReportOptions};
pub use sweep::{enumerate_specs, run_sweep, run_sweep_with_corpus};
pub use train::{run_training, LogLine, RunMeta, RunSpec};

use thiserror::Error;

/// Environment variable naming the default output root for the CLI.
pub const OUT_ROOT_ENV: &str = "NORMLAB_OUT";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("corpus exhausted: run needs {required} tokens but corpus provides {available}")]
    CorpusExhausted { required: u64, available: u64 },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("schema error in {file} line {line}: {message}")]
    Schema {
        file: String,
        line: usize,
        message: String,
    },
    #[error("non-finite loss in run {run_id} at step {step} (last good checkpoint: {last_checkpoint:?})")]
    NanLoss {
        run_id: String,
        step: u64,
        last_checkpoint: Option<std::path::PathBuf>,
    },
}
