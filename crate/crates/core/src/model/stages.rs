//! Stage contracts and the synthetic stage implementations.
//!
//! Stage functions never sleep themselves; they hand their drawn latency to a
//! [`Pace`]. The real-time executor passes a pace that sleeps (or spins) and
//! reports progress, the simulator passes a [`VirtualPace`] that only
//! accumulates, so the same stage code drives both.

use rand::{Rng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::ValidatedConfig;
use super::rng::{stream_rng, Stream};
use super::types::{ObservationBatch, SceneHandle, StageKind, StoredRecord, TaskId, TaskSpec, TrajectorySequence};
use crate::{us_to_ms, Micros};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StageError {
    #[error("task {task_id}: simulated load failure")]
    SimulatedLoadFailure { task_id: TaskId },
    #[error("task {task_id}: render called on an invalid sequence")]
    RenderOnInvalidSequence { task_id: TaskId },
    #[error("task {task_id}: storage write failure")]
    StorageWriteFailure { task_id: TaskId },
    #[error("task {task_id}: plan called on an unloaded scene")]
    SceneNotLoaded { task_id: TaskId },
    #[error("observation for task {got} stored against sequence {expected}")]
    TaskMismatch { expected: TaskId, got: TaskId },
    #[error("execution unit was terminated")]
    Interrupted,
    #[error("workflow {method}: {message}")]
    Workflow { method: &'static str, message: String },
}

impl StageError {
    /// Errors that abort a task (counted as lost) rather than the run.
    pub fn is_task_loss(&self) -> bool {
        matches!(
            self,
            StageError::SimulatedLoadFailure { .. }
                | StageError::StorageWriteFailure { .. }
                | StageError::Workflow { .. }
        )
    }
}

/// Where stage time goes.
pub trait Pace {
    /// Spends `dur_us` of stage time; returns the elapsed time, or
    /// `Interrupted` if the execution unit was killed meanwhile.
    fn spend(&mut self, stage: StageKind, dur_us: Micros, cpu_spin: bool) -> Result<Micros, StageError>;
}

/// Accumulates stage time without waiting.
#[derive(Debug, Default, Clone)]
pub struct VirtualPace {
    pub by_stage: [Micros; 5],
}

impl VirtualPace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total(&self) -> Micros {
        self.by_stage.iter().sum()
    }

    pub fn take(&mut self, stage: StageKind) -> Micros {
        std::mem::take(&mut self.by_stage[stage.index()])
    }
}

impl Pace for VirtualPace {
    fn spend(&mut self, stage: StageKind, dur_us: Micros, _: bool) -> Result<Micros, StageError> {
        self.by_stage[stage.index()] += dur_us;
        Ok(dur_us)
    }
}

/// The five lifecycle contracts. Implementations must be pure given their
/// inputs apart from time spent through `pace`.
pub trait StageSet: Send + Sync {
    fn load(&self, spec: &TaskSpec, pace: &mut dyn Pace) -> Result<SceneHandle, StageError>;

    fn randomize(&self, spec: &TaskSpec, scene: SceneHandle, pace: &mut dyn Pace) -> Result<SceneHandle, StageError>;

    fn plan(&self, spec: &TaskSpec, scene: &SceneHandle, pace: &mut dyn Pace)
        -> Result<TrajectorySequence, StageError>;

    fn render(
        &self,
        spec: &TaskSpec,
        seq: &TrajectorySequence,
        pace: &mut dyn Pace,
    ) -> Result<ObservationBatch, StageError>;

    fn store(
        &self,
        spec: &TaskSpec,
        seq: &TrajectorySequence,
        obs: &ObservationBatch,
        pace: &mut dyn Pace,
    ) -> Result<StoredRecord, StageError>;
}

fn per_frame_draws<R: Rng>(
    cfg: &ValidatedConfig,
    spec: &TaskSpec,
    stage: StageKind,
    frames: u32,
    rng: &mut R,
) -> Vec<Micros> {
    let dist = &cfg.profile_for(spec, stage).latency;
    (0..frames).map(|_| dist.sample_us(rng)).collect()
}

fn render_draws(spec: &TaskSpec, cfg: &ValidatedConfig, frames: u32) -> Vec<Micros> {
    let mut rng = stream_rng(spec.rng_seed, spec.task_id, Stream::Stage(StageKind::Render));
    per_frame_draws(cfg, spec, StageKind::Render, frames, &mut rng)
}

fn store_draw(spec: &TaskSpec, cfg: &ValidatedConfig, frames: u32) -> (Micros, bool) {
    let profile = cfg.profile_for(spec, StageKind::Store);
    let mut rng = stream_rng(spec.rng_seed, spec.task_id, Stream::Stage(StageKind::Store));
    let total = per_frame_draws(cfg, spec, StageKind::Store, frames, &mut rng)
        .into_iter()
        .sum();
    let failed = profile.failure_prob > 0.0 && rng.random::<f64>() < profile.failure_prob;
    (total, failed)
}

/// Whether attempt `attempt` (from 1) of `stage` on this task hangs.
pub fn hang_drawn(spec: &TaskSpec, cfg: &ValidatedConfig, stage: StageKind, attempt: u32) -> bool {
    let p = cfg.profile_for(spec, stage).hang_prob;
    p > 0.0 && stream_rng(spec.rng_seed, spec.task_id, Stream::Hang(stage, attempt)).random::<f64>() < p
}

/// Every draw the stages of one task make, computed without executing
/// them. Agrees exactly with what the stage functions spend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskDraws {
    pub load_us: Micros,
    pub load_failed: bool,
    pub randomize_us: Micros,
    pub frames: u32,
    pub plan_us: Micros,
    pub valid: bool,
    pub render_us: Micros,
    pub store_us: Micros,
    pub store_failed: bool,
}

impl TaskDraws {
    pub fn draw(spec: &TaskSpec, cfg: &ValidatedConfig) -> Self {
        let mut pace = VirtualPace::new();
        let load_failed = stage_load(spec, cfg, &mut pace).is_err();
        let load_us = pace.take(StageKind::Load);
        let scene = SceneHandle::loaded(spec.scene_ref.clone(), cfg.scene_bytes);
        let scene = stage_randomize(spec, scene, cfg, &mut pace).expect("virtual pace never interrupts");
        let randomize_us = pace.take(StageKind::Randomize);
        let seq = stage_plan(spec, &scene, cfg, &mut pace).expect("virtual pace never interrupts");
        let plan_us = pace.take(StageKind::Plan);
        let render_us = render_draws(spec, cfg, seq.frame_count).into_iter().sum();
        let (store_us, store_failed) = store_draw(spec, cfg, seq.frame_count);
        TaskDraws {
            load_us,
            load_failed,
            randomize_us,
            frames: seq.frame_count,
            plan_us,
            valid: seq.valid,
            render_us,
            store_us,
            store_failed,
        }
    }

    pub fn stage_us(&self, stage: StageKind) -> Micros {
        match stage {
            StageKind::Load => self.load_us,
            StageKind::Randomize => self.randomize_us,
            StageKind::Plan => self.plan_us,
            StageKind::Render => self.render_us,
            StageKind::Store => self.store_us,
        }
    }
}

pub fn stage_load(spec: &TaskSpec, cfg: &ValidatedConfig, pace: &mut dyn Pace) -> Result<SceneHandle, StageError> {
    let profile = cfg.profile_for(spec, StageKind::Load);
    let mut rng = stream_rng(spec.rng_seed, spec.task_id, Stream::Stage(StageKind::Load));
    let latency = profile.latency.sample_us(&mut rng);
    let failed = profile.failure_prob > 0.0 && rng.random::<f64>() < profile.failure_prob;
    pace.spend(StageKind::Load, latency, profile.cpu_spin)?;
    if failed {
        return Err(StageError::SimulatedLoadFailure { task_id: spec.task_id });
    }
    Ok(SceneHandle::loaded(spec.scene_ref.clone(), cfg.scene_bytes))
}

/// Pass-through apart from perturbing the scene's `variant` field.
pub fn stage_randomize(
    spec: &TaskSpec,
    mut scene: SceneHandle,
    cfg: &ValidatedConfig,
    pace: &mut dyn Pace,
) -> Result<SceneHandle, StageError> {
    let profile = cfg.profile_for(spec, StageKind::Randomize);
    let mut rng = stream_rng(spec.rng_seed, spec.task_id, Stream::Stage(StageKind::Randomize));
    let latency = profile.latency.sample_us(&mut rng);
    pace.spend(StageKind::Randomize, latency, profile.cpu_spin)?;
    if cfg.randomize_enabled {
        scene.variant = rng.next_u64();
    }
    Ok(scene)
}

pub fn stage_plan(
    spec: &TaskSpec,
    scene: &SceneHandle,
    cfg: &ValidatedConfig,
    pace: &mut dyn Pace,
) -> Result<TrajectorySequence, StageError> {
    if !scene.loaded {
        return Err(StageError::SceneNotLoaded { task_id: spec.task_id });
    }
    let profile = cfg.profile_for(spec, StageKind::Plan);
    let frame_count = cfg
        .frames
        .sample(&mut stream_rng(spec.rng_seed, spec.task_id, Stream::Frames));
    let mut rng = stream_rng(spec.rng_seed, spec.task_id, Stream::Stage(StageKind::Plan));
    let total: Micros = per_frame_draws(cfg, spec, StageKind::Plan, frame_count, &mut rng)
        .into_iter()
        .sum();
    // Drawn after the latencies: the sequence is produced, then judged.
    let valid = !(profile.failure_prob > 0.0 && rng.random::<f64>() < profile.failure_prob);
    let elapsed = pace.spend(StageKind::Plan, total, profile.cpu_spin)?;
    Ok(TrajectorySequence {
        task_id: spec.task_id,
        frame_count,
        plan_latency_ms: us_to_ms(elapsed),
        valid,
        scene_variant: scene.variant,
    })
}

pub fn stage_render(
    spec: &TaskSpec,
    seq: &TrajectorySequence,
    cfg: &ValidatedConfig,
    pace: &mut dyn Pace,
) -> Result<ObservationBatch, StageError> {
    if !seq.valid {
        return Err(StageError::RenderOnInvalidSequence { task_id: seq.task_id });
    }
    let profile = cfg.profile_for(spec, StageKind::Render);
    let draws = render_draws(spec, cfg, seq.frame_count);
    pace.spend(StageKind::Render, draws.iter().sum(), profile.cpu_spin)?;
    let mut payload = vec![0u8; (u64::from(seq.frame_count) * cfg.frame_bytes) as usize];
    stream_rng(spec.rng_seed, spec.task_id, Stream::Payload).fill_bytes(&mut payload);
    let latencies = draws.into_iter().map(us_to_ms).collect();
    ObservationBatch::new(seq.task_id, latencies, payload)
        .ok_or(StageError::RenderOnInvalidSequence { task_id: seq.task_id })
}

pub fn payload_digest(payload: &[u8]) -> String {
    Sha256::digest(payload)[..16]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn stage_store(
    spec: &TaskSpec,
    seq: &TrajectorySequence,
    obs: &ObservationBatch,
    cfg: &ValidatedConfig,
    pace: &mut dyn Pace,
) -> Result<StoredRecord, StageError> {
    if obs.task_id() != seq.task_id {
        return Err(StageError::TaskMismatch {
            expected: seq.task_id,
            got: obs.task_id(),
        });
    }
    let profile = cfg.profile_for(spec, StageKind::Store);
    let (total, failed) = store_draw(spec, cfg, obs.frame_count());
    pace.spend(StageKind::Store, total, profile.cpu_spin)?;
    if failed {
        return Err(StageError::StorageWriteFailure { task_id: spec.task_id });
    }
    Ok(StoredRecord {
        task_id: spec.task_id,
        scene_ref: spec.scene_ref.clone(),
        pipeline_id: spec.pipeline_id.clone(),
        scene_variant: seq.scene_variant,
        frame_count: obs.frame_count(),
        payload_len: obs.payload().len() as u64,
        payload_digest: payload_digest(obs.payload()),
        provenance: cfg.provenance(),
    })
}

/// Stages backed directly by the synthetic workload profiles of a config.
#[derive(Debug, Clone)]
pub struct SyntheticStages {
    cfg: std::sync::Arc<ValidatedConfig>,
}

impl SyntheticStages {
    pub fn new(cfg: std::sync::Arc<ValidatedConfig>) -> Self {
        SyntheticStages { cfg }
    }

    pub fn config(&self) -> &ValidatedConfig {
        &self.cfg
    }
}

impl StageSet for SyntheticStages {
    fn load(&self, spec: &TaskSpec, pace: &mut dyn Pace) -> Result<SceneHandle, StageError> {
        stage_load(spec, &self.cfg, pace)
    }

    fn randomize(&self, spec: &TaskSpec, scene: SceneHandle, pace: &mut dyn Pace) -> Result<SceneHandle, StageError> {
        stage_randomize(spec, scene, &self.cfg, pace)
    }

    fn plan(
        &self,
        spec: &TaskSpec,
        scene: &SceneHandle,
        pace: &mut dyn Pace,
    ) -> Result<TrajectorySequence, StageError> {
        stage_plan(spec, scene, &self.cfg, pace)
    }

    fn render(
        &self,
        spec: &TaskSpec,
        seq: &TrajectorySequence,
        pace: &mut dyn Pace,
    ) -> Result<ObservationBatch, StageError> {
        stage_render(spec, seq, &self.cfg, pace)
    }

    fn store(
        &self,
        spec: &TaskSpec,
        seq: &TrajectorySequence,
        obs: &ObservationBatch,
        pace: &mut dyn Pace,
    ) -> Result<StoredRecord, StageError> {
        stage_store(spec, seq, obs, &self.cfg, pace)
    }
}
