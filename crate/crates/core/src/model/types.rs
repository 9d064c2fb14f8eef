use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::profile::WorkloadProfile;

pub type TaskId = u64;
pub type WorkerId = u32;

/// Lifecycle stages, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Load,
    Randomize,
    Plan,
    Render,
    Store,
}

impl StageKind {
    pub const ALL: [StageKind; 5] = [
        StageKind::Load,
        StageKind::Randomize,
        StageKind::Plan,
        StageKind::Render,
        StageKind::Store,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<StageKind> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Load => "load",
            StageKind::Randomize => "randomize",
            StageKind::Plan => "plan",
            StageKind::Render => "render",
            StageKind::Store => "store",
        }
    }

    /// Plan, Render and Store latencies are per frame; Load and Randomize
    /// latencies are per task.
    pub fn per_frame(self) -> bool {
        matches!(self, StageKind::Plan | StageKind::Render | StageKind::Store)
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Role of a worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerRole {
    Planner,
    Renderer,
    /// Executes whole tasks, Load through Render, on one unit.
    Fused,
}

impl WorkerRole {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkerRole::Planner => "planner",
            WorkerRole::Renderer => "renderer",
            WorkerRole::Fused => "fused",
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<WorkerRole> {
        [WorkerRole::Planner, WorkerRole::Renderer, WorkerRole::Fused]
            .get(i as usize)
            .copied()
    }
}

impl fmt::Display for WorkerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for WorkerRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "planner" => Ok(WorkerRole::Planner),
            "renderer" => Ok(WorkerRole::Renderer),
            "fused" => Ok(WorkerRole::Fused),
            other => Err(format!("unknown role `{other}` (planner, renderer, fused)")),
        }
    }
}

/// Lightweight unit of work. Carries metadata only; payloads are loaded
/// lazily by whoever executes the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: TaskId,
    pub scene_ref: String,
    pub pipeline_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload_overrides: Option<BTreeMap<StageKind, WorkloadProfile>>,
    pub rng_seed: u64,
}

impl TaskSpec {
    pub fn new(task_id: TaskId, scene_ref: impl Into<String>, rng_seed: u64) -> Self {
        TaskSpec {
            task_id,
            scene_ref: scene_ref.into(),
            pipeline_id: "custom".to_string(),
            workload_overrides: None,
            rng_seed,
        }
    }

    pub fn override_for(&self, stage: StageKind) -> Option<&WorkloadProfile> {
        self.workload_overrides.as_ref().and_then(|m| m.get(&stage))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneHandle {
    pub scene_ref: String,
    /// Simulated payload size. Zero while unloaded.
    pub payload_bytes: u64,
    pub loaded: bool,
    /// Metadata field perturbed by the Randomize stage.
    pub variant: u64,
}

impl SceneHandle {
    pub fn unloaded(scene_ref: impl Into<String>) -> Self {
        SceneHandle {
            scene_ref: scene_ref.into(),
            payload_bytes: 0,
            loaded: false,
            variant: 0,
        }
    }

    pub fn loaded(scene_ref: impl Into<String>, payload_bytes: u64) -> Self {
        SceneHandle {
            scene_ref: scene_ref.into(),
            payload_bytes: payload_bytes.max(1),
            loaded: true,
            variant: 0,
        }
    }
}

/// Output of the Plan stage. `valid` is the planning success indicator;
/// invalid sequences never reach the renderer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySequence {
    pub task_id: TaskId,
    pub frame_count: u32,
    pub plan_latency_ms: f64,
    pub valid: bool,
    pub scene_variant: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    task_id: TaskId,
    frame_count: u32,
    per_frame_render_latency_ms: Vec<f64>,
    synthetic_payload: Vec<u8>,
}

impl ObservationBatch {
    /// Returns `None` unless `frame_count >= 1` and there is one latency per
    /// frame.
    pub fn new(task_id: TaskId, per_frame_render_latency_ms: Vec<f64>, synthetic_payload: Vec<u8>) -> Option<Self> {
        let frame_count = u32::try_from(per_frame_render_latency_ms.len()).ok()?;
        if frame_count == 0 {
            return None;
        }
        Some(ObservationBatch {
            task_id,
            frame_count,
            per_frame_render_latency_ms,
            synthetic_payload,
        })
    }

    pub fn task_id(&self) -> TaskId {
        self.task_id
    }

    pub fn frame_count(&self) -> u32 {
        self.frame_count
    }

    pub fn per_frame_render_latency_ms(&self) -> &[f64] {
        &self.per_frame_render_latency_ms
    }

    pub fn total_render_ms(&self) -> f64 {
        self.per_frame_render_latency_ms.iter().sum()
    }

    pub fn payload(&self) -> &[u8] {
        &self.synthetic_payload
    }
}

/// One persisted sample in the output log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub task_id: TaskId,
    pub scene_ref: String,
    pub pipeline_id: String,
    pub scene_variant: u64,
    pub frame_count: u32,
    pub payload_len: u64,
    /// First 16 bytes of the SHA-256 of the payload, hex encoded.
    pub payload_digest: String,
    pub provenance: Vec<StageKind>,
}
