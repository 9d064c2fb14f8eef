//! Real-time runtime: the serial baseline and the pipelined planner and
//! renderer pools decoupled by a bounded context queue, with storage
//! offloaded to an asynchronous batch writer.

mod context;
mod pace;
mod queue;
mod run;
mod writer;

use thiserror::Error;

pub use context::SimContext;
pub use pace::RealPace;
pub use queue::{BoundedQueue, Popped, QueueMessage, QueueStats, WaitAborted};
pub use run::{run_policy, RunOptions, RunOutput};
pub use writer::{BatchWriter, StoreJob, WriterHandle, WriterParams, WriterReport};

use crate::metrics::Policy;
use crate::model::{OutputLogError, StageError, ValidatedConfig};
use crate::workloads::TargetNotFound;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("hangs are configured without a supervisor policy: the run would never terminate")]
    NonterminatingConfig,
    #[error("context queue closed before every context was consumed")]
    QueueClosedEarly,
    #[error("fault schedule: {0}")]
    Faults(#[from] TargetNotFound),
    #[error("stage failure: {0}")]
    Stage(StageError),
    #[error("{0}")]
    Output(String),
    #[error("output log: {0}")]
    OutputLog(#[from] OutputLogError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Runs `cfg` with the policy its mode and flags select.
pub fn run(cfg: &ValidatedConfig, opts: RunOptions) -> Result<RunOutput, ExecError> {
    run_policy(cfg, Policy::for_config(cfg), opts)
}

/// One unit executes every stage of every task in lockstep.
pub fn run_serial_baseline(cfg: &ValidatedConfig, opts: RunOptions) -> Result<RunOutput, ExecError> {
    run_policy(cfg, Policy::Serial, opts)
}

/// The pipelined executor; dynamic reallocation follows `cfg.dynload`.
pub fn run_pipelined(cfg: &ValidatedConfig, opts: RunOptions) -> Result<RunOutput, ExecError> {
    let policy = if cfg.dynload {
        Policy::DynamicPipeline
    } else {
        Policy::StaticPipeline
    };
    run_policy(cfg, policy, opts)
}

#[cfg(test)]
mod tests;
