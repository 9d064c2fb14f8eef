//! Dynamic pipeline scheduling and the throughput model.

mod state;
pub mod throughput;

pub use state::{Backlog, Decision, ReallocEntry, SchedulerError, SchedulerState};
pub use throughput::{
    baseline_throughput, effective_throughput, estimate_total_time, successful_throughput, theoretical_max, StageModel,
    StepTrace, ThroughputError, ThroughputModel,
};
