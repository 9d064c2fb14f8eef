//! Metrics record types, one JSON object per line.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{StageKind, TaskId, ValidatedConfig, WorkerId, WorkerRole};
use crate::supervisor::SupervisorEvent;
use crate::workloads::FiredFault;
use crate::{us_to_ms, Micros};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Pruned,
    Lost,
}

/// Execution policy of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Serial,
    StaticPipeline,
    DynamicPipeline,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Serial => "serial",
            Policy::StaticPipeline => "static_pipeline",
            Policy::DynamicPipeline => "dynamic_pipeline",
        }
    }

    pub fn for_config(cfg: &ValidatedConfig) -> Policy {
        if !cfg.mode.is_pipelined() {
            Policy::Serial
        } else if cfg.dynload {
            Policy::DynamicPipeline
        } else {
            Policy::StaticPipeline
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Realtime,
    Simulated,
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub config_hash: String,
    pub workload_hash: String,
    pub source: Source,
    pub mode: String,
    pub policy: Policy,
    pub pipeline_id: String,
    pub task_count: u64,
    pub seed: u64,
    pub planner_workers: u32,
    pub renderer_workers: u32,
    pub fused: bool,
    pub dynload: bool,
    pub async_store: bool,
}

impl RunHeader {
    pub fn for_config(cfg: &ValidatedConfig, source: Source, policy: Policy) -> Self {
        let mode = match policy {
            Policy::Serial => "serial_baseline",
            _ => "pipelined",
        };
        RunHeader {
            config_hash: cfg.config_hash(),
            workload_hash: cfg.workload_hash(),
            source,
            mode: mode.to_string(),
            policy,
            pipeline_id: cfg.pipeline_id.clone(),
            task_count: cfg.task_count,
            seed: cfg.seed,
            planner_workers: cfg.planner_workers,
            renderer_workers: cfg.renderer_workers,
            fused: cfg.fused,
            dynload: cfg.dynload,
            async_store: cfg.async_store,
        }
    }
}

/// One interval a worker spent in one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub stage: StageKind,
    pub worker: WorkerId,
    pub start_ms: f64,
    pub end_ms: f64,
    /// The attempt was killed before the stage completed.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub killed: bool,
}

impl SpanRecord {
    pub fn new(stage: StageKind, worker: WorkerId, start_us: Micros, end_us: Micros) -> Self {
        SpanRecord {
            stage,
            worker,
            start_ms: us_to_ms(start_us),
            end_ms: us_to_ms(end_us),
            killed: false,
        }
    }

    pub fn killed(mut self) -> Self {
        self.killed = true;
        self
    }

    pub fn duration_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: TaskId,
    /// The worker that finished the task's last executed compute stage.
    pub worker_id: Option<WorkerId>,
    pub attempts: u32,
    pub outcome: Outcome,
    /// Planning success indicator.
    pub valid: bool,
    /// Frame count drawn at planning; 0 if planning never ran.
    pub frames: u32,
    /// Latency of every stage the task completed, in ms per task.
    pub latency_ms: BTreeMap<StageKind, f64>,
    pub spans: Vec<SpanRecord>,
}

impl TaskRecord {
    pub fn new(task_id: TaskId) -> Self {
        TaskRecord {
            task_id,
            worker_id: None,
            attempts: 1,
            outcome: Outcome::Lost,
            valid: false,
            frames: 0,
            latency_ms: BTreeMap::new(),
            spans: Vec::new(),
        }
    }

    pub fn rendered(&self) -> bool {
        self.latency_ms.contains_key(&StageKind::Render)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReallocDecision {
    SpawnRenderer,
    Release,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    Realloc {
        at_ms: f64,
        planner: WorkerId,
        decision: ReallocDecision,
        renderer: Option<WorkerId>,
        backlog: u64,
        in_render: u64,
    },
    WorkerJoined {
        at_ms: f64,
        worker: WorkerId,
        role: WorkerRole,
    },
    HangDetected {
        at_ms: f64,
        worker: WorkerId,
        incarnation: u32,
        last_seen_ms: f64,
    },
    CrashDetected {
        at_ms: f64,
        worker: WorkerId,
        incarnation: u32,
    },
    Killed {
        at_ms: f64,
        worker: WorkerId,
        incarnation: u32,
    },
    Respawned {
        at_ms: f64,
        worker: WorkerId,
        incarnation: u32,
    },
    BudgetExhausted {
        at_ms: f64,
        worker: WorkerId,
        respawns: u32,
    },
    Flush {
        at_ms: f64,
        batch: u64,
        records: u32,
    },
    Fault {
        at_ms: f64,
        fault: String,
        role: WorkerRole,
        index: u32,
        task_id: Option<TaskId>,
    },
    Requeued {
        at_ms: f64,
        task_id: TaskId,
        attempt: u32,
        reason: String,
    },
}

impl RunEvent {
    pub fn name(&self) -> &'static str {
        match self {
            RunEvent::Realloc { .. } => "realloc",
            RunEvent::WorkerJoined { .. } => "worker_joined",
            RunEvent::HangDetected { .. } => "hang_detected",
            RunEvent::CrashDetected { .. } => "crash_detected",
            RunEvent::Killed { .. } => "killed",
            RunEvent::Respawned { .. } => "respawned",
            RunEvent::BudgetExhausted { .. } => "budget_exhausted",
            RunEvent::Flush { .. } => "flush",
            RunEvent::Fault { .. } => "fault",
            RunEvent::Requeued { .. } => "requeued",
        }
    }

    pub fn at_ms(&self) -> f64 {
        match self {
            RunEvent::Realloc { at_ms, .. }
            | RunEvent::WorkerJoined { at_ms, .. }
            | RunEvent::HangDetected { at_ms, .. }
            | RunEvent::CrashDetected { at_ms, .. }
            | RunEvent::Killed { at_ms, .. }
            | RunEvent::Respawned { at_ms, .. }
            | RunEvent::BudgetExhausted { at_ms, .. }
            | RunEvent::Flush { at_ms, .. }
            | RunEvent::Fault { at_ms, .. }
            | RunEvent::Requeued { at_ms, .. } => *at_ms,
        }
    }
}

impl From<&SupervisorEvent> for RunEvent {
    fn from(e: &SupervisorEvent) -> Self {
        match *e {
            SupervisorEvent::HangDetected {
                at_us,
                worker,
                incarnation,
                last_seen_us,
            } => RunEvent::HangDetected {
                at_ms: us_to_ms(at_us),
                worker,
                incarnation,
                last_seen_ms: us_to_ms(last_seen_us),
            },
            SupervisorEvent::CrashDetected {
                at_us,
                worker,
                incarnation,
            } => RunEvent::CrashDetected {
                at_ms: us_to_ms(at_us),
                worker,
                incarnation,
            },
            SupervisorEvent::Killed {
                at_us,
                worker,
                incarnation,
            } => RunEvent::Killed {
                at_ms: us_to_ms(at_us),
                worker,
                incarnation,
            },
            SupervisorEvent::Respawned {
                at_us,
                worker,
                incarnation,
            } => RunEvent::Respawned {
                at_ms: us_to_ms(at_us),
                worker,
                incarnation,
            },
            SupervisorEvent::BudgetExhausted {
                at_us,
                worker,
                respawns,
            } => RunEvent::BudgetExhausted {
                at_ms: us_to_ms(at_us),
                worker,
                respawns,
            },
        }
    }
}

impl From<&FiredFault> for RunEvent {
    fn from(f: &FiredFault) -> Self {
        RunEvent::Fault {
            at_ms: us_to_ms(f.at_us),
            fault: match f.kind {
                crate::workloads::FaultKind::Slow { factor } => format!("slow x{factor}"),
                ref k => k.name().to_string(),
            },
            role: f.role,
            index: f.index,
            task_id: f.task_id,
        }
    }
}

/// Run summary. Every field is recomputable from the task and event lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub makespan_ms: f64,
    pub completed: u64,
    pub pruned: u64,
    pub lost: u64,
    /// Time-averaged concurrency of the plan and render stages over each
    /// stage's own active window.
    pub n_bar_plan: f64,
    pub n_bar_render: f64,
    /// Mean per-frame latencies, ms.
    pub ell_plan_ms: f64,
    pub ell_render_ms: f64,
    /// Effective stage throughputs, frames/s. Null when the stage never ran
    /// or costs nothing.
    pub mu_plan: Option<f64>,
    pub mu_render: Option<f64>,
    /// min(mu_plan, mu_render), frames/s.
    pub lambda_theory: Option<f64>,
    /// Reciprocal of the summed mean per-task stage latencies, tasks/s.
    pub lambda_base: Option<f64>,
    /// Successful plans per second of run time, tasks/s.
    pub lambda_succ: f64,
    /// Rendered frames per second of run time.
    pub throughput_fps: f64,
    pub successes: u64,
    pub rendered_frames: u64,
    pub frames_per_render: f64,
    /// Estimated total time, ms: per-task render latency over N̄_render,
    /// times the number of successful plans.
    pub t_hat_ms: Option<f64>,
}

/// One line of a metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Line {
    Header(RunHeader),
    Task(TaskRecord),
    Event(RunEvent),
    Summary(Summary),
}
