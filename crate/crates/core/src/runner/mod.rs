//! Experiment plumbing: config files, the end-to-end pipeline, artifacts.

mod config;
mod experiment;
mod io;

use thiserror::Error;

pub use config::{DataSection, EvalSection, LinearProbe, ReferenceSection, RunConfig, TargetSection};
pub use experiment::{
    diag_only, eval_checkpoint, load_datasets, run_ablation, write_ablation_csv, run_experiment, run_pipeline, AblationRow, Datasets, RunOutcome,
    ARTIFACT_ACCURACY, ARTIFACT_CHECKPOINT, ARTIFACT_CONFIG, ARTIFACT_DIAGNOSTICS, ARTIFACT_METRICS, ARTIFACT_TREND,
    SCHEMA_VERSION,
};
pub use io::{read_point_csv, write_plan_csv, OtMethod, OtSummary};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config at {path}: {reason}")]
    Invalid { path: String, reason: String },
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Train(crate::trainer::TrainError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Ot(#[from] crate::ot::OtError),
    #[error(transparent)]
    Augment(#[from] crate::augment::AugmentError),
    #[error(transparent)]
    Reference(#[from] crate::reference::ReferenceError),
}

impl From<crate::trainer::TrainError> for RunError {
    fn from(e: crate::trainer::TrainError) -> Self {
        match e {
            crate::trainer::TrainError::Diverged { step, detail } => RunError::Diverged { step, detail },
            other => RunError::Train(other),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl RunError {
    /// 2 for configuration problems, 3 for divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Invalid { .. } => 2,
            RunError::Diverged { .. } => 3,
            _ => 1,
        }
    }
}
