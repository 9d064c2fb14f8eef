use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::profile::{FrameDist, LatencyDist, ProfileError, WorkloadProfile};
use super::rng::task_seed;
use super::types::{StageKind, TaskSpec};
use crate::supervisor::SupervisorPolicy;
use crate::workloads;
pub use crate::workloads::RenderVariant;
use crate::{ms_to_us, Micros};

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;
const DEFAULT_STORE_MS_PER_FRAME: f64 = 56.0;
const DEFAULT_FRAME_BYTES: u64 = 16 * 1024;
const DEFAULT_SCENE_BYTES: u64 = 1 << 20;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field} must be >= 1 in pipelined modes")]
    ZeroWorkers { field: &'static str },
    #[error("stage map is empty and no workload preset was given")]
    EmptyStageMap,
    #[error("{field}: probability {value} outside [0, 1]")]
    ProbabilityOutOfRange { field: String, value: f64 },
    #[error("{field}: {reason}")]
    InvalidLatency { field: String, reason: String },
    #[error("stages.{stage}: no latency profile configured")]
    MissingStage { stage: StageKind },
    #[error("stages.{stage}.failure_prob: failures are only modeled for load, plan and store")]
    FailureNotSupported { stage: StageKind },
    #[error("{field} must be >= 1")]
    ZeroValue { field: &'static str },
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(transparent)]
    UnknownPreset(#[from] workloads::UnknownPreset),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ProfileError> for ConfigError {
    fn from(e: ProfileError) -> Self {
        match e {
            ProfileError::ProbabilityOutOfRange { field, value } => ConfigError::ProbabilityOutOfRange { field, value },
            ProfileError::InvalidLatency { field, reason } => ConfigError::InvalidLatency { field, reason },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Real-time pipelined execution.
    #[default]
    Realtime,
    /// Pipelined semantics executed by the discrete-event simulator.
    Simulated,
    /// One worker running every stage in lockstep.
    SerialBaseline,
}

impl Mode {
    pub fn is_pipelined(self) -> bool {
        !matches!(self, Mode::SerialBaseline)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchWriterConfig {
    pub batch_size: usize,
    pub flush_interval_ms: f64,
}

impl Default for BatchWriterConfig {
    fn default() -> Self {
        BatchWriterConfig {
            batch_size: 8,
            flush_interval_ms: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterTimeouts {
    pub heartbeat_interval_ms: u64,
    pub suspect_timeout_ms: u64,
    pub dead_timeout_ms: u64,
    pub max_attempts: u32,
}

impl Default for ClusterTimeouts {
    fn default() -> Self {
        ClusterTimeouts {
            heartbeat_interval_ms: 1000,
            suspect_timeout_ms: 3000,
            dead_timeout_ms: 10_000,
            max_attempts: 3,
        }
    }
}

/// Partial stage profile as written in a config file; merged over presets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyDist>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hang_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_spin: Option<bool>,
}

impl From<WorkloadProfile> for StageOverride {
    fn from(p: WorkloadProfile) -> Self {
        StageOverride {
            latency: Some(p.latency),
            failure_prob: Some(p.failure_prob),
            hang_prob: Some(p.hang_prob),
            cpu_spin: Some(p.cpu_spin),
        }
    }
}

impl StageOverride {
    fn apply(&self, base: Option<WorkloadProfile>) -> Option<WorkloadProfile> {
        let mut p = match (base, &self.latency) {
            (Some(mut b), Some(l)) => {
                b.latency = l.clone();
                b
            }
            (Some(b), None) => b,
            (None, Some(l)) => WorkloadProfile::from_latency(l.clone()),
            (None, None) => return None,
        };
        if let Some(f) = self.failure_prob {
            p.failure_prob = f;
        }
        if let Some(h) = self.hang_prob {
            p.hang_prob = h;
        }
        if let Some(c) = self.cpu_spin {
            p.cpu_spin = c;
        }
        Some(p)
    }
}

/// Declarative pipeline configuration, as read from a TOML document.
/// Unset fields are filled by [`validate_config`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render_variant: Option<RenderVariant>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_count: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner_workers: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub renderer_workers: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_capacity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynload: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub async_store: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spawn_latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub io_workers: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<FrameDist>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_writer: Option<BatchWriterConfig>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stages: BTreeMap<StageKind, StageOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supervisor: Option<SupervisorPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterTimeouts>,
}

impl PipelineConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_preset(name: &str) -> Self {
        PipelineConfig {
            workload: Some(name.to_string()),
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn stage(mut self, kind: StageKind, profile: WorkloadProfile) -> Self {
        self.stages.insert(kind, profile.into());
        self
    }

    pub fn stage_ms(self, kind: StageKind, ms: f64) -> Self {
        self.stage(kind, WorkloadProfile::constant(ms))
    }

    pub fn tasks(mut self, m: u64) -> Self {
        self.task_count = Some(m);
        self
    }

    pub fn workers(mut self, planners: u32, renderers: u32) -> Self {
        self.planner_workers = Some(planners);
        self.renderer_workers = Some(renderers);
        self
    }

    pub fn mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn frames(mut self, frames: u32) -> Self {
        self.frames = Some(FrameDist::Constant { frames });
        self
    }

    pub fn dynload(mut self, on: bool) -> Self {
        self.dynload = Some(on);
        self
    }
}

/// A fully resolved, checked configuration. Stage latencies are already
/// multiplied by `time_scale`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedConfig {
    pub pipeline_id: String,
    pub mode: Mode,
    pub task_count: u64,
    pub seed: u64,
    pub planner_workers: u32,
    pub renderer_workers: u32,
    pub queue_capacity: usize,
    pub dynload: bool,
    /// Plan and Render run synchronously in one worker; `renderer_workers`
    /// is the number of fused workers.
    pub fused: bool,
    pub async_store: bool,
    pub time_scale: f64,
    pub frame_bytes: u64,
    pub scene_bytes: u64,
    pub scene_count: u64,
    pub spawn_latency_us: Micros,
    pub io_workers: u32,
    pub frames: FrameDist,
    pub batch_size: usize,
    pub flush_interval_us: Micros,
    pub stages: [WorkloadProfile; 5],
    pub randomize_enabled: bool,
    pub supervisor: Option<SupervisorPolicy>,
    pub cluster: ClusterTimeouts,
}

impl ValidatedConfig {
    pub fn profile(&self, stage: StageKind) -> &WorkloadProfile {
        &self.stages[stage.index()]
    }

    pub fn profile_mut(&mut self, stage: StageKind) -> &mut WorkloadProfile {
        &mut self.stages[stage.index()]
    }

    /// The effective profile of `stage` for one task.
    pub fn profile_for<'a>(&'a self, spec: &'a TaskSpec, stage: StageKind) -> &'a WorkloadProfile {
        spec.override_for(stage).unwrap_or_else(|| self.profile(stage))
    }

    pub fn any_hangs(&self) -> bool {
        self.stages.iter().any(|p| p.hang_prob > 0.0)
    }

    pub fn provenance(&self) -> Vec<StageKind> {
        StageKind::ALL
            .into_iter()
            .filter(|s| *s != StageKind::Randomize || self.randomize_enabled)
            .collect()
    }

    /// Task specs for this run: ids `0..task_count`, seeds derived from the
    /// run seed.
    pub fn tasks(&self) -> Vec<TaskSpec> {
        (0..self.task_count)
            .map(|i| TaskSpec {
                task_id: i,
                scene_ref: format!("scene-{:05}", i % self.scene_count.max(1)),
                pipeline_id: self.pipeline_id.clone(),
                workload_overrides: None,
                rng_seed: task_seed(self.seed, i),
            })
            .collect()
    }

    /// Mean per-task latency of each stage, in ms, using the configured means.
    pub fn mean_stage_ms(&self) -> [f64; 5] {
        let frames = self.frames.mean();
        let mut out = [0.0; 5];
        for s in StageKind::ALL {
            let mean = self.profile(s).latency.mean_ms();
            out[s.index()] = if s.per_frame() { mean * frames } else { mean };
        }
        out
    }

    pub fn config_hash(&self) -> String {
        hash_json(self)
    }

    /// Hash of everything that determines stage draws, ignoring topology.
    /// Two runs are comparable only when their workload hashes match.
    pub fn workload_hash(&self) -> String {
        #[derive(Serialize)]
        struct Workload<'a> {
            pipeline_id: &'a str,
            task_count: u64,
            seed: u64,
            frames: &'a FrameDist,
            frame_bytes: u64,
            scene_bytes: u64,
            scene_count: u64,
            stages: &'a [WorkloadProfile; 5],
        }
        hash_json(&Workload {
            pipeline_id: &self.pipeline_id,
            task_count: self.task_count,
            seed: self.seed,
            frames: &self.frames,
            frame_bytes: self.frame_bytes,
            scene_bytes: self.scene_bytes,
            scene_count: self.scene_count,
            stages: &self.stages,
        })
    }
}

fn hash_json<T: Serialize>(v: &T) -> String {
    let json = serde_json::to_vec(v).unwrap_or_default();
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Resolves presets and defaults and checks every invariant of a
/// [`PipelineConfig`].
pub fn validate_config(cfg: &PipelineConfig) -> Result<ValidatedConfig, ConfigError> {
    let preset = match cfg.workload.as_deref() {
        Some(name) => Some(workloads::preset(name)?),
        None => None,
    };

    let mut stages: BTreeMap<StageKind, WorkloadProfile> = preset
        .as_ref()
        .map(|p| p.stages_for(cfg.render_variant.unwrap_or_default()))
        .unwrap_or_default();
    for (kind, ov) in &cfg.stages {
        match ov.apply(stages.get(kind).cloned()) {
            Some(p) => {
                stages.insert(*kind, p);
            }
            None => {
                return Err(ConfigError::InvalidLatency {
                    field: format!("stages.{kind}.latency"),
                    reason: "override for a stage without a base profile must set latency".into(),
                })
            }
        }
    }
    if stages.is_empty() {
        return Err(ConfigError::EmptyStageMap);
    }
    for required in [StageKind::Plan, StageKind::Render] {
        if !stages.contains_key(&required) {
            return Err(ConfigError::MissingStage { stage: required });
        }
    }
    let randomize_enabled = stages.contains_key(&StageKind::Randomize);
    for kind in StageKind::ALL {
        let p = stages.entry(kind).or_insert_with(|| match kind {
            StageKind::Store => WorkloadProfile::constant(DEFAULT_STORE_MS_PER_FRAME),
            _ => WorkloadProfile::pass_through(),
        });
        p.validate(&format!("stages.{kind}"))?;
        if p.failure_prob > 0.0 && matches!(kind, StageKind::Randomize | StageKind::Render) {
            return Err(ConfigError::FailureNotSupported { stage: kind });
        }
    }

    let time_scale = cfg.time_scale.unwrap_or(1.0);
    if !(time_scale.is_finite() && time_scale > 0.0) {
        return Err(ConfigError::Invalid {
            field: "time_scale",
            reason: format!("must be finite and > 0, got {time_scale}"),
        });
    }

    let fused = cfg
        .fused
        .unwrap_or_else(|| preset.as_ref().map(|p| p.fusion).unwrap_or(false));
    let planner_workers = cfg
        .planner_workers
        .or(preset.as_ref().map(|p| p.planner_workers))
        .unwrap_or(1);
    let renderer_workers = cfg
        .renderer_workers
        .or(preset.as_ref().map(|p| p.renderer_workers))
        .unwrap_or(1);
    if cfg.mode.is_pipelined() {
        if renderer_workers == 0 {
            return Err(ConfigError::ZeroWorkers {
                field: "renderer_workers",
            });
        }
        if planner_workers == 0 && !fused {
            return Err(ConfigError::ZeroWorkers {
                field: "planner_workers",
            });
        }
    }

    let queue_capacity = cfg.queue_capacity.unwrap_or(DEFAULT_QUEUE_CAPACITY);
    if queue_capacity == 0 {
        return Err(ConfigError::ZeroValue {
            field: "queue_capacity",
        });
    }
    let batch = cfg.batch_writer.clone().unwrap_or_default();
    if batch.batch_size == 0 {
        return Err(ConfigError::ZeroValue {
            field: "batch_writer.batch_size",
        });
    }
    if !(batch.flush_interval_ms.is_finite() && batch.flush_interval_ms > 0.0) {
        return Err(ConfigError::Invalid {
            field: "batch_writer.flush_interval_ms",
            reason: "must be > 0".into(),
        });
    }
    let io_workers = cfg.io_workers.unwrap_or(4);
    if io_workers == 0 {
        return Err(ConfigError::ZeroValue { field: "io_workers" });
    }
    let spawn_latency_ms = cfg.spawn_latency_ms.unwrap_or(500.0);
    if !(spawn_latency_ms.is_finite() && spawn_latency_ms >= 0.0) {
        return Err(ConfigError::Invalid {
            field: "spawn_latency_ms",
            reason: "must be >= 0".into(),
        });
    }
    let frames = cfg
        .frames
        .clone()
        .or_else(|| preset.as_ref().map(|p| p.frames.clone()))
        .unwrap_or_default();
    frames.validate()?;
    if let Some(policy) = &cfg.supervisor {
        policy.validate().map_err(|reason| ConfigError::Invalid {
            field: "supervisor",
            reason,
        })?;
    }
    let cluster = cfg.cluster.clone().unwrap_or_default();
    if cluster.suspect_timeout_ms > cluster.dead_timeout_ms || cluster.max_attempts == 0 {
        return Err(ConfigError::Invalid {
            field: "cluster",
            reason: "need suspect_timeout_ms <= dead_timeout_ms and max_attempts >= 1".into(),
        });
    }

    let task_count = cfg.task_count.or(preset.as_ref().map(|p| p.task_count)).unwrap_or(1);
    let stages_arr = StageKind::ALL.map(|k| stages[&k].scaled(time_scale));

    Ok(ValidatedConfig {
        pipeline_id: cfg.workload.clone().unwrap_or_else(|| "custom".to_string()),
        mode: cfg.mode,
        task_count,
        seed: cfg.seed,
        planner_workers,
        renderer_workers,
        queue_capacity,
        dynload: cfg.dynload.unwrap_or(false),
        fused,
        async_store: cfg.async_store.unwrap_or(true),
        time_scale,
        frame_bytes: cfg.frame_bytes.unwrap_or(DEFAULT_FRAME_BYTES),
        scene_bytes: cfg.scene_bytes.unwrap_or(DEFAULT_SCENE_BYTES),
        scene_count: cfg.scene_count.unwrap_or(task_count).max(1),
        spawn_latency_us: ms_to_us(spawn_latency_ms * time_scale),
        io_workers,
        frames,
        batch_size: batch.batch_size,
        flush_interval_us: ms_to_us(batch.flush_interval_ms * time_scale).max(1),
        stages: stages_arr,
        randomize_enabled,
        supervisor: cfg.supervisor.clone(),
        cluster,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> PipelineConfig {
        PipelineConfig::new()
            .stage_ms(StageKind::Load, 1.0)
            .stage_ms(StageKind::Plan, 2.0)
            .stage_ms(StageKind::Render, 3.0)
            .stage_ms(StageKind::Store, 4.0)
            .workers(1, 1)
    }

    #[test]
    fn zero_renderers_rejected_in_pipelined_mode() {
        let cfg = minimal().workers(1, 0);
        assert!(matches!(
            validate_config(&cfg),
            Err(ConfigError::ZeroWorkers {
                field: "renderer_workers"
            })
        ));
        // The serial baseline never uses the renderer pool.
        assert!(validate_config(&cfg.mode(Mode::SerialBaseline)).is_ok());
    }

    #[test]
    fn out_of_range_probability_names_field() {
        let cfg = minimal().stage(StageKind::Plan, WorkloadProfile::constant(2.0).with_failure(1.5));
        match validate_config(&cfg) {
            Err(ConfigError::ProbabilityOutOfRange { field, value }) => {
                assert_eq!(field, "stages.plan.failure_prob");
                assert_eq!(value, 1.5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let v = validate_config(&minimal()).unwrap();
        assert_eq!(v.queue_capacity, 64);
        assert_eq!(v.batch_size, 8);
        assert_eq!(v.frames, FrameDist::Constant { frames: 32 });
        assert_eq!(v.frame_bytes, 16 * 1024);
        assert!(!v.randomize_enabled);
        assert_eq!(v.profile(StageKind::Randomize).latency, LatencyDist::zero());
    }

    #[test]
    fn store_defaults_to_56ms_per_frame() {
        let cfg = PipelineConfig::new()
            .stage_ms(StageKind::Plan, 1.0)
            .stage_ms(StageKind::Render, 1.0);
        let v = validate_config(&cfg).unwrap();
        assert_eq!(v.profile(StageKind::Store).latency, LatencyDist::constant(56.0));
    }

    #[test]
    fn empty_stage_map_rejected() {
        assert!(matches!(
            validate_config(&PipelineConfig::new()),
            Err(ConfigError::EmptyStageMap)
        ));
        let only_load = PipelineConfig::new().stage_ms(StageKind::Load, 1.0);
        assert!(matches!(
            validate_config(&only_load),
            Err(ConfigError::MissingStage { stage: StageKind::Plan })
        ));
    }

    #[test]
    fn render_failures_are_not_modeled() {
        let cfg = minimal().stage(StageKind::Render, WorkloadProfile::constant(1.0).with_failure(0.1));
        assert!(matches!(
            validate_config(&cfg),
            Err(ConfigError::FailureNotSupported {
                stage: StageKind::Render
            })
        ));
    }

    #[test]
    fn time_scale_multiplies_latencies() {
        let mut cfg = minimal();
        cfg.time_scale = Some(0.5);
        let v = validate_config(&cfg).unwrap();
        assert_eq!(v.profile(StageKind::Render).latency, LatencyDist::constant(1.5));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "task_count = 3\nbogus = 1\n";
        assert!(matches!(
            PipelineConfig::from_toml_str(text),
            Err(ConfigError::Parse(_))
        ));
        let nested = "[stages.plan]\nlatency = { kind = \"constant\", ms = 1.0 }\nwat = 2\n";
        assert!(PipelineConfig::from_toml_str(nested).is_err());
    }

    #[test]
    fn file_schema_parses_and_round_trips() {
        let text = r#"
            task_count = 10
            seed = 9
            mode = "simulated"
            planner_workers = 2
            renderer_workers = 1
            dynload = true
            frames = { kind = "constant", frames = 1 }

            [batch_writer]
            batch_size = 4
            flush_interval_ms = 20.0

            [stages.plan]
            latency = { kind = "constant", ms = 100.0 }
            failure_prob = 0.3

            [stages.render]
            latency = { kind = "uniform", lo = 250.0, hi = 350.0 }
        "#;
        let cfg = PipelineConfig::from_toml_str(text).unwrap();
        let v = validate_config(&cfg).unwrap();
        assert_eq!(v.mode, Mode::Simulated);
        assert_eq!(v.planner_workers, 2);
        assert_eq!(v.batch_size, 4);
        assert_eq!(v.profile(StageKind::Plan).failure_prob, 0.3);
        let again = PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn preset_overrides_merge_field_wise() {
        let text = r#"
            workload = "genmanip"
            [stages.plan]
            failure_prob = 0.5
        "#;
        let v = validate_config(&PipelineConfig::from_toml_str(text).unwrap()).unwrap();
        let base = validate_config(&PipelineConfig::from_preset("genmanip")).unwrap();
        assert_eq!(v.profile(StageKind::Plan).failure_prob, 0.5);
        assert_eq!(
            v.profile(StageKind::Plan).latency,
            base.profile(StageKind::Plan).latency
        );
        assert_eq!(v.task_count, 200);
    }

    #[test]
    fn tasks_are_deterministic() {
        let v = validate_config(&minimal().tasks(5).seed(3)).unwrap();
        let a = v.tasks();
        assert_eq!(a, v.tasks());
        assert_eq!(a.len(), 5);
        assert!(a.windows(2).all(|w| w[0].rng_seed != w[1].rng_seed));
    }
}
