//! Runtime for staged synthetic data-generation workloads.
//!
//! Tasks flow through a Load → Randomize → Plan → Render → Store lifecycle.
//! The crate provides:
//!
//! * [`model`]: task and stage data types, stage contracts, the workflow
//!   adapter and configuration validation.
//! * [`executor`]: the real-time runtime (serial baseline and the pipelined
//!   planner/renderer pools with an asynchronous batch writer).
//! * [`scheduler`]: planner-exit-driven renderer provisioning and the
//!   throughput model used by the analytics.
//! * [`cluster`]: a pull-based master/worker load balancer with heartbeats,
//!   lazy context loading and dead-worker requeue.
//! * [`supervisor`]: out-of-band liveness monitoring with forced kill and
//!   respawn.
//! * [`sim`]: a deterministic discrete-event simulator used as the oracle for
//!   every timing claim.
//! * [`workloads`]: synthetic workload presets and fault schedules.
//! * [`metrics`]: JSON-lines metrics, reports and self-consistency checks.

pub mod clock;
pub mod cluster;
pub mod codec;
pub mod executor;
pub mod metrics;
pub mod model;
pub mod scheduler;
pub mod sim;
pub mod supervisor;
pub mod workloads;

pub use metrics::RunMetrics;
pub use model::{
    validate_config, LatencyDist, Mode, ObservationBatch, PipelineConfig, SceneHandle, StageKind, StoredRecord, TaskId,
    TaskSpec, TrajectorySequence, ValidatedConfig, WorkerId, WorkloadProfile,
};

/// Microseconds; the resolution of all internal clocks.
pub type Micros = u64;

pub(crate) fn ms_to_us(ms: f64) -> Micros {
    if ms.is_finite() && ms > 0.0 {
        (ms * 1000.0).round() as Micros
    } else {
        0
    }
}

pub(crate) fn us_to_ms(us: Micros) -> f64 {
    us as f64 / 1000.0
}
