//! Pipeline data model, stage contracts and configuration.

mod config;
mod output;
mod profile;
pub mod rng;
mod stages;
mod types;
pub mod wire;
mod workflow;

pub use config::{
    validate_config, BatchWriterConfig, ClusterTimeouts, ConfigError, Mode, PipelineConfig, RenderVariant,
    StageOverride, ValidatedConfig, DEFAULT_QUEUE_CAPACITY,
};
pub use output::{decode_record, decode_records, encode_record, OutputLog, OutputLogError};
pub use profile::{FrameDist, LatencyDist, ProfileError, WorkloadProfile};
pub use stages::{
    hang_drawn, payload_digest, stage_load, stage_plan, stage_randomize, stage_render, stage_store, Pace, StageError,
    StageSet, SyntheticStages, TaskDraws, VirtualPace,
};
pub use types::{
    ObservationBatch, SceneHandle, StageKind, StoredRecord, TaskId, TaskSpec, TrajectorySequence, WorkerId, WorkerRole,
};
pub use workflow::{MissingWorkflowMethod, Workflow, WorkflowAdapter, WorkflowMethod};
