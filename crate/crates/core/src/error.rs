use thiserror::Error;

use crate::gateway::GatewayError;
use crate::metrics::MetricError;
use crate::prompt::PromptError;
use crate::runner::RunnerError;
use crate::synth::SynthError;
use crate::task::TaskError;
use crate::trainer::TrainError;

/// Crate-level error with a process exit code mapping.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
}

impl Error {
    /// 1 for validation/configuration problems, 2 for backend failures,
    /// 3 for partial runs where some cells or labels failed.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Gateway(_) => 2,
            Error::Synth(SynthError::Partial { completed, .. }) if !completed.is_empty() => 3,
            Error::Synth(e) if e.is_backend_failure() => 2,
            Error::Runner(e) => e.exit_code(),
            _ => 1,
        }
    }
}
