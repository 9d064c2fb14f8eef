//! Adapter from the five-method workflow interface
//! (`reset`, `randomization`, `generate_seq`, `seq_replay`, `save`) to the
//! stage contracts, so executors never know which kind they are driving.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::config::ValidatedConfig;
use super::stages::{self, Pace, StageError, StageSet};
use super::types::{ObservationBatch, SceneHandle, StoredRecord, TaskSpec, TrajectorySequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkflowMethod {
    Reset,
    Randomization,
    GenerateSeq,
    SeqReplay,
    Save,
}

impl fmt::Display for WorkflowMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WorkflowMethod::Reset => "reset",
            WorkflowMethod::Randomization => "randomization",
            WorkflowMethod::GenerateSeq => "generate_seq",
            WorkflowMethod::SeqReplay => "seq_replay",
            WorkflowMethod::Save => "save",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("workflow does not implement `{0}`")]
pub struct MissingWorkflowMethod(pub WorkflowMethod);

type ResetFn = dyn Fn(&TaskSpec, &mut dyn Pace) -> Result<SceneHandle, StageError> + Send + Sync;
type RandomizeFn = dyn Fn(&TaskSpec, SceneHandle, &mut dyn Pace) -> Result<SceneHandle, StageError> + Send + Sync;
type GenerateFn =
    dyn Fn(&TaskSpec, &SceneHandle, &mut dyn Pace) -> Result<TrajectorySequence, StageError> + Send + Sync;
type ReplayFn =
    dyn Fn(&TaskSpec, &TrajectorySequence, &mut dyn Pace) -> Result<ObservationBatch, StageError> + Send + Sync;
type SaveFn = dyn Fn(&TaskSpec, &TrajectorySequence, &ObservationBatch, &mut dyn Pace) -> Result<StoredRecord, StageError>
    + Send
    + Sync;

/// A workflow under construction. Every method must be supplied before it
/// can be adapted.
#[derive(Default)]
pub struct Workflow {
    reset: Option<Box<ResetFn>>,
    randomization: Option<Box<RandomizeFn>>,
    generate_seq: Option<Box<GenerateFn>>,
    seq_replay: Option<Box<ReplayFn>>,
    save: Option<Box<SaveFn>>,
}

impl Workflow {
    pub fn new() -> Self {
        Self::default()
    }

    /// A workflow whose methods delegate to the synthetic stages.
    pub fn synthetic(cfg: Arc<ValidatedConfig>) -> Self {
        let (c1, c2, c3, c4, c5) = (cfg.clone(), cfg.clone(), cfg.clone(), cfg.clone(), cfg);
        Workflow::new()
            .reset(move |spec, pace| stages::stage_load(spec, &c1, pace))
            .randomization(move |spec, scene, pace| stages::stage_randomize(spec, scene, &c2, pace))
            .generate_seq(move |spec, scene, pace| stages::stage_plan(spec, scene, &c3, pace))
            .seq_replay(move |spec, seq, pace| stages::stage_render(spec, seq, &c4, pace))
            .save(move |spec, seq, obs, pace| stages::stage_store(spec, seq, obs, &c5, pace))
    }

    pub fn reset<F>(mut self, f: F) -> Self
    where
        F: Fn(&TaskSpec, &mut dyn Pace) -> Result<SceneHandle, StageError> + Send + Sync + 'static,
    {
        self.reset = Some(Box::new(f));
        self
    }

    pub fn randomization<F>(mut self, f: F) -> Self
    where
        F: Fn(&TaskSpec, SceneHandle, &mut dyn Pace) -> Result<SceneHandle, StageError> + Send + Sync + 'static,
    {
        self.randomization = Some(Box::new(f));
        self
    }

    pub fn generate_seq<F>(mut self, f: F) -> Self
    where
        F: Fn(&TaskSpec, &SceneHandle, &mut dyn Pace) -> Result<TrajectorySequence, StageError> + Send + Sync + 'static,
    {
        self.generate_seq = Some(Box::new(f));
        self
    }

    pub fn seq_replay<F>(mut self, f: F) -> Self
    where
        F: Fn(&TaskSpec, &TrajectorySequence, &mut dyn Pace) -> Result<ObservationBatch, StageError>
            + Send
            + Sync
            + 'static,
    {
        self.seq_replay = Some(Box::new(f));
        self
    }

    pub fn save<F>(mut self, f: F) -> Self
    where
        F: Fn(&TaskSpec, &TrajectorySequence, &ObservationBatch, &mut dyn Pace) -> Result<StoredRecord, StageError>
            + Send
            + Sync
            + 'static,
    {
        self.save = Some(Box::new(f));
        self
    }
}

/// Stage implementations backed by a complete [`Workflow`].
pub struct WorkflowAdapter {
    reset: Box<ResetFn>,
    randomization: Box<RandomizeFn>,
    generate_seq: Box<GenerateFn>,
    seq_replay: Box<ReplayFn>,
    save: Box<SaveFn>,
}

impl fmt::Debug for WorkflowAdapter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WorkflowAdapter").finish_non_exhaustive()
    }
}

impl WorkflowAdapter {
    pub fn new(w: Workflow) -> Result<Self, MissingWorkflowMethod> {
        use WorkflowMethod::*;
        Ok(WorkflowAdapter {
            reset: w.reset.ok_or(MissingWorkflowMethod(Reset))?,
            randomization: w.randomization.ok_or(MissingWorkflowMethod(Randomization))?,
            generate_seq: w.generate_seq.ok_or(MissingWorkflowMethod(GenerateSeq))?,
            seq_replay: w.seq_replay.ok_or(MissingWorkflowMethod(SeqReplay))?,
            save: w.save.ok_or(MissingWorkflowMethod(Save))?,
        })
    }
}

impl StageSet for WorkflowAdapter {
    fn load(&self, spec: &TaskSpec, pace: &mut dyn Pace) -> Result<SceneHandle, StageError> {
        (self.reset)(spec, pace)
    }

    fn randomize(&self, spec: &TaskSpec, scene: SceneHandle, pace: &mut dyn Pace) -> Result<SceneHandle, StageError> {
        (self.randomization)(spec, scene, pace)
    }

    fn plan(
        &self,
        spec: &TaskSpec,
        scene: &SceneHandle,
        pace: &mut dyn Pace,
    ) -> Result<TrajectorySequence, StageError> {
        if !scene.loaded {
            return Err(StageError::SceneNotLoaded { task_id: spec.task_id });
        }
        (self.generate_seq)(spec, scene, pace)
    }

    fn render(
        &self,
        spec: &TaskSpec,
        seq: &TrajectorySequence,
        pace: &mut dyn Pace,
    ) -> Result<ObservationBatch, StageError> {
        if !seq.valid {
            return Err(StageError::RenderOnInvalidSequence { task_id: seq.task_id });
        }
        (self.seq_replay)(spec, seq, pace)
    }

    fn store(
        &self,
        spec: &TaskSpec,
        seq: &TrajectorySequence,
        obs: &ObservationBatch,
        pace: &mut dyn Pace,
    ) -> Result<StoredRecord, StageError> {
        if obs.task_id() != seq.task_id {
            return Err(StageError::TaskMismatch {
                expected: seq.task_id,
                got: obs.task_id(),
            });
        }
        (self.save)(spec, seq, obs, pace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_config, PipelineConfig, StageKind, VirtualPace};

    fn cfg() -> Arc<ValidatedConfig> {
        let mut c = PipelineConfig::new()
            .stage_ms(StageKind::Plan, 1.0)
            .stage_ms(StageKind::Render, 2.0)
            .frames(2);
        c.frame_bytes = Some(8);
        Arc::new(validate_config(&c).unwrap())
    }

    #[test]
    fn synthetic_workflow_round_trips_one_task() {
        let adapter = WorkflowAdapter::new(Workflow::synthetic(cfg())).unwrap();
        let spec = TaskSpec::new(0, "scene", 11);
        let mut pace = VirtualPace::new();
        let scene = adapter.load(&spec, &mut pace).unwrap();
        let scene = adapter.randomize(&spec, scene, &mut pace).unwrap();
        let seq = adapter.plan(&spec, &scene, &mut pace).unwrap();
        let obs = adapter.render(&spec, &seq, &mut pace).unwrap();
        let rec = adapter.store(&spec, &seq, &obs, &mut pace).unwrap();
        assert_eq!(rec.task_id, 0);
        assert_eq!(rec.frame_count, 2);
    }

    #[test]
    fn missing_save_is_reported() {
        let c = cfg();
        let w = Workflow::new()
            .reset(|_, _| Ok(SceneHandle::loaded("x", 1)))
            .randomization(|_, s, _| Ok(s))
            .generate_seq({
                let c = c.clone();
                move |spec, scene, pace| stages::stage_plan(spec, scene, &c, pace)
            })
            .seq_replay(move |spec, seq, pace| stages::stage_render(spec, seq, &c, pace));
        assert_eq!(
            WorkflowAdapter::new(w).unwrap_err(),
            MissingWorkflowMethod(WorkflowMethod::Save)
        );
    }
}
