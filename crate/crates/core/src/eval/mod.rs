//! Experiment orchestration: few-shot evaluation, leave-one-dataset-out
//! rotation, staged hyperparameter sweeps, and result reports.

mod dreg;
mod fewshot;
mod report;
mod sweep;

use thiserror::Error;

pub use dreg::{dreg, dreg_cell, dreg_rotation, holdout_eval_set, DregConfig, Rotation};
pub use fewshot::{embed_clips, fewshot_cell, fewshot_eval, fewshot_eval_embedded, with_workers, FewshotConfig};
pub use report::{
    emit_report, error_reductions, load_report, Aggregate, EvalRecord, EvalReport, ReportFormat,
};
pub use sweep::{sweep, Axis, SweepPoint, SweepRow, SweepSources, SweepSpec, SweepTable};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Embed(#[from] crate::embedder::EmbedError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Pretrain(#[from] crate::pretrain::PretrainError),
    #[error("report format: {0}")]
    Format(String),
    #[error("report file: {0}")]
    Io(#[from] std::io::Error),
    #[error("report csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("report json: {0}")]
    Json(#[from] serde_json::Error),
}
