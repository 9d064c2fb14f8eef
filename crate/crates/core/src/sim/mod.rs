//! Deterministic discrete-event simulator.
//!
//! Executes the same pipelined semantics as the real-time executor in
//! virtual time with 1 µs resolution: bounded queue with blocking
//! producers, planner-exit reallocation, the batch writer and its I/O pool,
//! and supervisor hang detection. Events at one instant are ordered
//! StageEnd, Flush, HeartbeatTick, WorkerKill, PlannerExit, WorkerSpawn,
//! TaskAssign, StageStart, then by worker id.

mod engine;
mod sweep;

use serde::Serialize;
use thiserror::Error;

pub use engine::IO_WORKER_BASE;
pub use sweep::{list_schedule, scaling_sweep, ScalingPoint};

use crate::metrics::{Policy, RunEvent, RunHeader, RunMetrics, Source, TaskRecord};
use crate::model::{Mode, StageKind, StoredRecord, TaskId, ValidatedConfig, WorkerId};
use crate::{us_to_ms, Micros};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("hang_prob > 0 without a supervisor policy: the run would never terminate")]
    NonterminatingConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEventKind {
    StageStart,
    StageEnd,
    PlannerExit,
    WorkerSpawn,
    WorkerKill,
    HeartbeatTick,
    TaskAssign,
    Flush,
}

impl SimEventKind {
    pub fn priority(self) -> u8 {
        match self {
            SimEventKind::StageEnd => 0,
            SimEventKind::Flush => 1,
            SimEventKind::HeartbeatTick => 2,
            SimEventKind::WorkerKill => 3,
            SimEventKind::PlannerExit => 4,
            SimEventKind::WorkerSpawn => 5,
            SimEventKind::TaskAssign => 6,
            SimEventKind::StageStart => 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimEvent {
    pub time_us: Micros,
    pub kind: SimEventKind,
    pub worker: Option<WorkerId>,
    pub task: Option<TaskId>,
    pub stage: Option<StageKind>,
}

/// Per-stage concurrency from `time_us` until the next point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConcurrencyPoint {
    pub time_us: Micros,
    pub counts: [u32; 5],
}

impl ConcurrencyPoint {
    pub fn count(&self, stage: StageKind) -> u32 {
        self.counts[stage.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub policy: Policy,
    pub makespan_us: Micros,
    pub per_stage_busy_us: [Micros; 5],
    pub concurrency_trace: Vec<ConcurrencyPoint>,
    pub completed: u64,
    pub pruned: u64,
    pub lost: u64,
    pub timeline: Vec<SimEvent>,
    /// Task records in finishing order.
    pub tasks: Vec<TaskRecord>,
    pub events: Vec<RunEvent>,
    /// Output records of completed tasks, when requested.
    pub records: Vec<StoredRecord>,
}

impl SimResult {
    pub fn makespan_ms(&self) -> f64 {
        us_to_ms(self.makespan_us)
    }

    pub fn busy_ms(&self, stage: StageKind) -> f64 {
        us_to_ms(self.per_stage_busy_us[stage.index()])
    }

    /// Peak concurrency of `stage` over the run.
    pub fn peak(&self, stage: StageKind) -> u32 {
        self.concurrency_trace.iter().map(|p| p.count(stage)).max().unwrap_or(0)
    }

    pub fn to_metrics(&self, cfg: &ValidatedConfig) -> RunMetrics {
        RunMetrics::new(
            RunHeader::for_config(cfg, Source::Simulated, self.policy),
            self.tasks.clone(),
            self.events.clone(),
        )
    }
}

/// Simulates `cfg` under the policy its mode and `dynload` select.
pub fn simulate(cfg: &ValidatedConfig) -> Result<SimResult, SimError> {
    simulate_policy(cfg, Policy::for_config(cfg))
}

pub fn simulate_policy(cfg: &ValidatedConfig, policy: Policy) -> Result<SimResult, SimError> {
    engine::Engine::new(cfg, policy, false).map(engine::Engine::run)
}

/// Like [`simulate`], also producing the output records of completed tasks.
pub fn simulate_with_records(cfg: &ValidatedConfig) -> Result<SimResult, SimError> {
    engine::Engine::new(cfg, Policy::for_config(cfg), true).map(engine::Engine::run)
}

/// `cfg` adjusted to run under `policy`.
pub fn config_for_policy(cfg: &ValidatedConfig, policy: Policy) -> ValidatedConfig {
    let mut c = cfg.clone();
    match policy {
        Policy::Serial => c.mode = Mode::SerialBaseline,
        Policy::StaticPipeline | Policy::DynamicPipeline => {
            if !c.mode.is_pipelined() {
                c.mode = Mode::Simulated;
            }
            c.dynload = policy == Policy::DynamicPipeline;
        }
    }
    c
}

/// One simulation per policy on the same workload and seeds.
pub fn compare_policies(cfg: &ValidatedConfig, policies: &[Policy]) -> Result<Vec<SimResult>, SimError> {
    policies
        .iter()
        .map(|&p| simulate_policy(&config_for_policy(cfg, p), p))
        .collect()
}

/// `base` makespan over `candidate` makespan.
pub fn speedup(base: &SimResult, candidate: &SimResult) -> f64 {
    base.makespan_us as f64 / candidate.makespan_us as f64
}

#[cfg(test)]
mod tests;
