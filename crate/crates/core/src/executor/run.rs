//! Unit loops and the run coordinator.

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Duration;

use crossbeam_channel::{unbounded, Sender};
use log::{debug, warn};

use super::context::SimContext;
use super::pace::RealPace;
use super::queue::{BoundedQueue, Popped, QueueMessage, QueueStats};
use super::writer::{BatchWriter, StoreJob, WriterHandle, WriterParams};
use super::ExecError;
use crate::clock::RunClock;
use crate::metrics::{
    Line, MetricsWriter, Outcome, Policy, RunEvent, RunHeader, RunMetrics, Source, SpanRecord, TaskRecord,
};
use crate::model::{
    hang_drawn, OutputLog, StageError, StageKind, StageSet, StoredRecord, SyntheticStages, TaskId, TaskSpec,
    ValidatedConfig, WorkerId, WorkerRole,
};
use crate::scheduler::{Backlog, Decision, SchedulerState};
use crate::supervisor::{
    ExecutionUnit, Heartbeat, Phase, Respawner, StatusMonitor, SupervisorEvent, SupervisorRuntime, ThreadUnit,
    UnitControl,
};
use crate::workloads::{apply_faults, FaultKind, FaultPlan, FaultSchedule, FiredFault, Topology};
use crate::{us_to_ms, Micros};

const WAIT_TICK: Duration = Duration::from_millis(10);

#[derive(Default)]
pub struct RunOptions {
    /// JSON-lines metrics file, streamed while the run progresses.
    pub metrics_path: Option<PathBuf>,
    /// Output log file; in memory when unset.
    pub output_path: Option<PathBuf>,
    pub faults: Option<FaultSchedule>,
    /// Stage implementations; the config's synthetic profiles when unset.
    pub stages: Option<Arc<dyn StageSet>>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub output: Arc<OutputLog>,
    pub queue: QueueStats,
    /// Sampled `(time_us, depth)` of the context queue.
    pub queue_depth_trace: Vec<(Micros, usize)>,
    pub batches: u64,
    /// Completion reports dropped because the task was already resolved.
    pub duplicates: u64,
    pub supervisor_events: Vec<SupervisorEvent>,
    pub faults: Vec<FiredFault>,
}

impl RunOutput {
    pub fn makespan_ms(&self) -> f64 {
        self.metrics.makespan_ms()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Planner,
    Renderer,
    Fused,
    Serial,
}

impl Role {
    fn worker_role(self) -> WorkerRole {
        match self {
            Role::Planner => WorkerRole::Planner,
            Role::Renderer => WorkerRole::Renderer,
            Role::Fused | Role::Serial => WorkerRole::Fused,
        }
    }
}

enum Work {
    Task(TaskSpec),
    Context(Vec<u8>),
}

/// What a unit is working on, kept outside the unit so a replacement can
/// pick it up.
struct InFlight {
    task: TaskId,
    work: Work,
    stage: Option<(StageKind, Micros)>,
}

struct Stream {
    tasks: VecDeque<TaskSpec>,
    /// False once the planner found its stream empty and left.
    open: bool,
}

struct UnitInfo {
    role: Role,
    active: bool,
}

enum Stop {
    Killed,
    Crashed,
    Lost(StageError),
}

impl From<StageError> for Stop {
    fn from(e: StageError) -> Self {
        match e {
            StageError::Interrupted => Stop::Killed,
            e => Stop::Lost(e),
        }
    }
}

struct Shared {
    cfg: Arc<ValidatedConfig>,
    stages: Arc<dyn StageSet>,
    clock: RunClock,
    sync_store: bool,
    queue: BoundedQueue<Vec<u8>>,
    blocked: Mutex<u64>,
    streams: Mutex<BTreeMap<WorkerId, Stream>>,
    pool: Mutex<VecDeque<TaskSpec>>,
    inflight: Mutex<BTreeMap<WorkerId, InFlight>>,
    records: Mutex<BTreeMap<TaskId, TaskRecord>>,
    writer: WriterHandle,
    heartbeats: Option<Sender<Heartbeat>>,
    heartbeat_us: Micros,
    faults: Arc<FaultPlan>,
    sched: Mutex<SchedulerState>,
    supervisor: Mutex<Option<SupervisorRuntime>>,
    units: Mutex<BTreeMap<WorkerId, UnitInfo>>,
    idle: Condvar,
    planners: u32,
    threads: Mutex<Vec<ThreadUnit>>,
    fatal: Mutex<Option<StageError>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Shared {
    fn now(&self) -> Micros {
        self.clock.now_us()
    }

    fn role(&self, id: WorkerId) -> Role {
        lock(&self.units)[&id].role
    }

    fn fault_index(&self, id: WorkerId, role: Role) -> u32 {
        match role {
            Role::Renderer => id - self.planners,
            _ => id,
        }
    }

    fn attempts(&self, task: TaskId) -> u32 {
        lock(&self.records).get(&task).map_or(1, |r| r.attempts)
    }

    fn with_record(&self, task: TaskId, f: impl FnOnce(&mut TaskRecord)) {
        if let Some(r) = lock(&self.records).get_mut(&task) {
            f(r);
        }
    }

    fn set_stage(&self, id: WorkerId, stage: Option<(StageKind, Micros)>) {
        if let Some(f) = lock(&self.inflight).get_mut(&id) {
            f.stage = stage;
        }
    }

    /// Resolves a task without the writer's I/O pool.
    fn finish(&self, task: TaskId, outcome: Outcome, stored: Option<StoredRecord>) {
        if let Some(mut rec) = lock(&self.records).remove(&task) {
            rec.outcome = outcome;
            self.writer.done(rec, stored);
        }
    }

    fn event(&self, e: RunEvent) {
        self.writer.event(e);
    }

    fn requeued(&self, task: TaskId, reason: &str) {
        let attempt = self.attempts(task);
        self.event(RunEvent::Requeued {
            at_ms: us_to_ms(self.now()),
            task_id: task,
            attempt,
            reason: reason.to_string(),
        });
    }

    fn unit_done(&self, id: WorkerId) {
        let mut g = lock(&self.units);
        if let Some(u) = g.get_mut(&id) {
            u.active = false;
        }
        drop(g);
        self.idle.notify_all();
    }

    /// The unit died mid-stage: close the interrupted span and count the
    /// next attempt.
    fn note_killed(&self, id: WorkerId) {
        let now = self.now();
        let mut inflight = lock(&self.inflight);
        let Some(f) = inflight.get_mut(&id) else { return };
        let stage = f.stage.take();
        let task = f.task;
        drop(inflight);
        self.with_record(task, |r| {
            if let Some((stage, start)) = stage {
                r.spans.push(SpanRecord::new(stage, id, start, now.max(start)).killed());
            }
            r.attempts += 1;
        });
    }

    /// Moves the work of a permanently dead unit elsewhere.
    fn abandon(&self, id: WorkerId) {
        let role = self.role(id);
        let taken = lock(&self.inflight).remove(&id);
        match role {
            Role::Renderer => {
                if let Some(InFlight {
                    task,
                    work: Work::Context(bytes),
                    ..
                }) = taken
                {
                    self.requeued(task, "budget_exhausted");
                    self.queue.requeue(bytes);
                }
                lock(&self.sched).on_renderer_exit(id);
            }
            Role::Planner => {
                lock(&self.sched).on_planner_dead(id);
                let mut streams = lock(&self.streams);
                let mut orphaned = streams
                    .get_mut(&id)
                    .map(|s| {
                        s.open = false;
                        std::mem::take(&mut s.tasks)
                    })
                    .unwrap_or_default();
                if let Some(InFlight {
                    task,
                    work: Work::Task(spec),
                    ..
                }) = taken
                {
                    self.requeued(task, "budget_exhausted");
                    orphaned.push_front(spec);
                }
                let heir = streams
                    .iter()
                    .filter(|(w, s)| **w != id && s.open)
                    .min_by_key(|(w, s)| (s.tasks.len(), **w))
                    .map(|(w, _)| *w);
                match heir {
                    Some(h) => streams.get_mut(&h).expect("heir exists").tasks.extend(orphaned),
                    None => {
                        drop(streams);
                        for spec in orphaned {
                            self.finish(spec.task_id, Outcome::Lost, None);
                        }
                    }
                }
                self.queue.push_force(QueueMessage::Poison(id));
            }
            Role::Fused | Role::Serial => {
                if let Some(InFlight {
                    task,
                    work: Work::Task(spec),
                    ..
                }) = taken
                {
                    self.requeued(task, "budget_exhausted");
                    lock(&self.pool).push_front(spec);
                }
            }
        }
        self.unit_done(id);
    }

    fn spawn_unit(self: &Arc<Self>, id: WorkerId, incarnation: u32, delay_us: Micros) -> std::io::Result<ThreadUnit> {
        let role = self.role(id);
        let sh = self.clone();
        ThreadUnit::spawn(format!("{}-{id}", role.worker_role()), move |ctl| {
            sh.unit_main(id, role, incarnation, delay_us, ctl)
        })
    }

    /// Starts a unit and hands it to the supervisor, if there is one.
    fn launch(self: &Arc<Self>, id: WorkerId, role: Role, delay_us: Micros) -> std::io::Result<()> {
        lock(&self.units).insert(id, UnitInfo { role, active: true });
        let unit = self.spawn_unit(id, 0, delay_us)?;
        match lock(&self.supervisor).as_ref() {
            Some(rt) => rt.register(id, Box::new(unit)),
            None => lock(&self.threads).push(unit),
        }
        Ok(())
    }

    fn unit_main(self: Arc<Self>, id: WorkerId, role: Role, incarnation: u32, delay_us: Micros, ctl: Arc<UnitControl>) {
        let mut pace = RealPace::new(ctl, self.clock);
        if let Some(tx) = &self.heartbeats {
            let m = StatusMonitor::new(id, incarnation, Some(tx.clone()), self.clock, self.heartbeat_us);
            pace = pace.with_monitor(m);
        }
        if !self.faults.is_empty() {
            pace = pace.with_faults(self.faults.clone(), role.worker_role(), self.fault_index(id, role));
        }
        pace.heartbeat(Phase::Idle);
        let mut result = Ok(());
        if delay_us > 0 {
            result = pace.wait(Phase::Idle, delay_us, false).map(|_| ()).map_err(Stop::from);
            if result.is_ok() {
                self.event(RunEvent::WorkerJoined {
                    at_ms: us_to_ms(self.now()),
                    worker: id,
                    role: WorkerRole::Renderer,
                });
            }
        }
        if result.is_ok() {
            result = match role {
                Role::Planner => self.planner_loop(id, &mut pace),
                Role::Renderer => self.renderer_loop(id, &mut pace),
                Role::Fused | Role::Serial => self.fused_loop(id, &mut pace),
            };
        }
        match result {
            Ok(()) => {
                pace.finish();
                self.unit_done(id);
            }
            Err(Stop::Killed) => debug!("worker {id} incarnation {incarnation} stopped"),
            Err(Stop::Crashed) => {
                warn!("worker {id} crashed");
                if lock(&self.supervisor).is_none() {
                    self.note_killed(id);
                    self.abandon(id);
                }
            }
            Err(Stop::Lost(e)) => unreachable!("task loss escaped its task: {e}"),
        }
    }

    fn stop_of(pace: &RealPace, e: StageError) -> Stop {
        if pace.crashed() {
            Stop::Crashed
        } else {
            Stop::from(e)
        }
    }

    /// Runs one stage of `spec` on unit `id`, recording its span.
    fn stage<T>(
        &self,
        id: WorkerId,
        pace: &mut RealPace,
        spec: &TaskSpec,
        stage: StageKind,
        f: impl FnOnce(&dyn StageSet, &mut RealPace) -> Result<T, StageError>,
    ) -> Result<T, Stop> {
        let start = self.now();
        self.set_stage(id, Some((stage, start)));
        if self.cfg.supervisor.is_some() && hang_drawn(spec, &self.cfg, stage, self.attempts(spec.task_id)) {
            pace.hang().map_err(|e| Self::stop_of(pace, e))?;
        }
        pace.heartbeat(Phase::Stage(stage));
        let r = f(&*self.stages, pace);
        let end = self.now();
        if pace.crashed() {
            return Err(Stop::Crashed);
        }
        if pace.is_killed() {
            return Err(Stop::Killed);
        }
        self.set_stage(id, None);
        if pace.last_requested_us() > 0 {
            self.with_record(spec.task_id, |rec| {
                rec.spans.push(SpanRecord::new(stage, id, start, end));
                rec.latency_ms.insert(stage, us_to_ms(end - start));
            });
        }
        r.map_err(|e| Self::stop_of(pace, e))
    }

    /// Turns a per-task loss into a resolved task; passes unit stops up.
    fn settle(&self, task: TaskId, id: WorkerId, r: Result<(), Stop>) -> Result<(), Stop> {
        match r {
            Err(Stop::Lost(e)) => {
                if !e.is_task_loss() {
                    warn!("task {task}: {e}");
                    lock(&self.fatal).get_or_insert(e);
                }
                self.with_record(task, |rec| rec.worker_id = Some(id));
                self.finish(task, Outcome::Lost, None);
                Ok(())
            }
            other => other,
        }
    }

    fn fenced(pace: &RealPace) -> Result<(), Stop> {
        if pace.is_killed() {
            Err(Stop::Killed)
        } else {
            Ok(())
        }
    }

    /// Load, Randomize and Plan. `None` when the task was pruned.
    fn front(
        &self,
        id: WorkerId,
        pace: &mut RealPace,
        spec: &TaskSpec,
    ) -> Result<Option<crate::model::TrajectorySequence>, Stop> {
        pace.poll_faults(Some(spec.task_id))
            .map_err(|e| Self::stop_of(pace, e))?;
        let scene = self.stage(id, pace, spec, StageKind::Load, |s, p| s.load(spec, p))?;
        let scene = self.stage(id, pace, spec, StageKind::Randomize, |s, p| s.randomize(spec, scene, p))?;
        let seq = self.stage(id, pace, spec, StageKind::Plan, |s, p| s.plan(spec, &scene, p))?;
        self.with_record(spec.task_id, |rec| {
            rec.frames = seq.frame_count;
            rec.valid = seq.valid;
            rec.worker_id = Some(id);
        });
        if !seq.valid {
            Self::fenced(pace)?;
            self.finish(spec.task_id, Outcome::Pruned, None);
            return Ok(None);
        }
        Ok(Some(seq))
    }

    /// Render, then Store inline or through the writer.
    fn back(
        &self,
        id: WorkerId,
        pace: &mut RealPace,
        spec: &TaskSpec,
        seq: crate::model::TrajectorySequence,
    ) -> Result<(), Stop> {
        let obs = self.stage(id, pace, spec, StageKind::Render, |s, p| s.render(spec, &seq, p))?;
        self.with_record(spec.task_id, |rec| rec.worker_id = Some(id));
        if self.sync_store {
            let stored = self.stage(id, pace, spec, StageKind::Store, |s, p| s.store(spec, &seq, &obs, p))?;
            Self::fenced(pace)?;
            self.finish(spec.task_id, Outcome::Completed, Some(stored));
        } else {
            Self::fenced(pace)?;
            if let Some(record) = lock(&self.records).remove(&spec.task_id) {
                self.writer.submit(StoreJob {
                    spec: spec.clone(),
                    sequence: seq,
                    obs,
                    record,
                });
            }
        }
        Ok(())
    }

    fn planner_loop(self: &Arc<Self>, id: WorkerId, pace: &mut RealPace) -> Result<(), Stop> {
        loop {
            let resumed = lock(&self.inflight).get(&id).and_then(|f| match &f.work {
                Work::Task(s) => Some(s.clone()),
                Work::Context(_) => None,
            });
            let spec = match resumed {
                Some(s) => s,
                None => {
                    let mut streams = lock(&self.streams);
                    let s = streams.get_mut(&id).expect("planner has a stream");
                    match s.tasks.pop_front() {
                        Some(spec) => {
                            lock(&self.inflight).insert(
                                id,
                                InFlight {
                                    task: spec.task_id,
                                    work: Work::Task(spec.clone()),
                                    stage: None,
                                },
                            );
                            spec
                        }
                        None => {
                            s.open = false;
                            break;
                        }
                    }
                }
            };
            let task = spec.task_id;
            let r = self.front(id, pace, &spec).and_then(|seq| {
                let Some(seq) = seq else { return Ok(()) };
                let bytes = SimContext::new(spec.clone(), seq).encode();
                self.enqueue(pace, QueueMessage::Context(bytes))
            });
            self.settle(task, id, r)?;
            lock(&self.inflight).remove(&id);
        }
        self.enqueue(pace, QueueMessage::Poison(id))?;
        let (queued, in_render) = self.queue.backlog();
        let blocked = *lock(&self.blocked);
        let backlog = Backlog {
            queued: queued + blocked,
            in_render,
        };
        let mut sched = lock(&self.sched);
        let decision = sched.on_planner_exit(id, backlog, self.now());
        let entry = sched.reallocation_log.last().map(|e| e.to_event());
        drop(sched);
        if let Some(e) = entry {
            self.event(e);
        }
        if let Ok(Decision::SpawnRenderer { renderer }) = decision {
            if let Err(e) = self.launch(renderer, Role::Renderer, self.cfg.spawn_latency_us) {
                warn!("spawning renderer {renderer}: {e}");
                lock(&self.sched).on_renderer_exit(renderer);
            }
        }
        Ok(())
    }

    fn enqueue(&self, pace: &mut RealPace, msg: QueueMessage<Vec<u8>>) -> Result<(), Stop> {
        Self::fenced(pace)?;
        let msg = match self.queue.try_push(msg) {
            Ok(()) => return Ok(()),
            Err(m) => m,
        };
        *lock(&self.blocked) += 1;
        let r = self.queue.push_with(msg, WAIT_TICK, || {
            pace.heartbeat(Phase::Idle);
            pace.is_killed()
        });
        *lock(&self.blocked) -= 1;
        r.map_err(|_| Stop::Killed)
    }

    fn renderer_loop(&self, id: WorkerId, pace: &mut RealPace) -> Result<(), Stop> {
        loop {
            let resumed = lock(&self.inflight).get(&id).and_then(|f| match &f.work {
                Work::Context(b) => Some(b.clone()),
                Work::Task(_) => None,
            });
            let bytes = match resumed {
                Some(b) => b,
                None => {
                    let popped = self
                        .queue
                        .pop_with(WAIT_TICK, || {
                            pace.heartbeat(Phase::Idle);
                            pace.is_killed()
                        })
                        .map_err(|_| Stop::Killed)?;
                    match popped {
                        Popped::Drained => break,
                        Popped::Poison(_) => continue,
                        Popped::Context(b) => b,
                    }
                }
            };
            let ctx = match SimContext::decode(&bytes) {
                Ok(c) => c,
                Err(e) => {
                    warn!("worker {id}: undecodable context: {e}");
                    self.queue.done();
                    continue;
                }
            };
            let task = ctx.spec.task_id;
            lock(&self.inflight).insert(
                id,
                InFlight {
                    task,
                    work: Work::Context(bytes),
                    stage: None,
                },
            );
            let r = pace
                .poll_faults(Some(task))
                .map_err(|e| Self::stop_of(pace, e))
                .and_then(|_| self.back(id, pace, &ctx.spec, ctx.sequence));
            self.settle(task, id, r)?;
            lock(&self.inflight).remove(&id);
            self.queue.done();
        }
        lock(&self.sched).on_renderer_exit(id);
        Ok(())
    }

    fn fused_loop(&self, id: WorkerId, pace: &mut RealPace) -> Result<(), Stop> {
        loop {
            let resumed = lock(&self.inflight).get(&id).and_then(|f| match &f.work {
                Work::Task(s) => Some(s.clone()),
                Work::Context(_) => None,
            });
            let spec = match resumed {
                Some(s) => s,
                None => match lock(&self.pool).pop_front() {
                    Some(spec) => {
                        lock(&self.inflight).insert(
                            id,
                            InFlight {
                                task: spec.task_id,
                                work: Work::Task(spec.clone()),
                                stage: None,
                            },
                        );
                        spec
                    }
                    None => break,
                },
            };
            let task = spec.task_id;
            let r = self.front(id, pace, &spec).and_then(|seq| match seq {
                Some(seq) => self.back(id, pace, &spec, seq),
                None => Ok(()),
            });
            self.settle(task, id, r)?;
            lock(&self.inflight).remove(&id);
        }
        Ok(())
    }
}

struct ExecRespawner {
    shared: Arc<Shared>,
}

impl Respawner for ExecRespawner {
    fn respawn(&mut self, worker: WorkerId, incarnation: u32) -> std::io::Result<Box<dyn ExecutionUnit>> {
        self.shared.note_killed(worker);
        Ok(Box::new(self.shared.spawn_unit(worker, incarnation, 0)?))
    }

    fn abandon(&mut self, worker: WorkerId) {
        self.shared.note_killed(worker);
        self.shared.abandon(worker);
    }
}

fn hang_faults(schedule: Option<&FaultSchedule>) -> bool {
    schedule.is_some_and(|s| s.faults.iter().any(|f| f.kind == FaultKind::Hang))
}

/// Executes `cfg` in real time under `policy`.
pub fn run_policy(cfg: &ValidatedConfig, policy: Policy, opts: RunOptions) -> Result<RunOutput, ExecError> {
    if (cfg.any_hangs() || hang_faults(opts.faults.as_ref())) && cfg.supervisor.is_none() {
        return Err(ExecError::NonterminatingConfig);
    }
    let mut c = cfg.clone();
    c.dynload = policy == Policy::DynamicPipeline;
    let cfg = Arc::new(c);
    let m = cfg.task_count;
    let fused = policy == Policy::Serial || cfg.fused;
    let (planners, renderers, fused_units) = match policy {
        Policy::Serial => (0, 0, 1),
        _ if cfg.fused => (0, 0, cfg.renderer_workers),
        _ => (cfg.planner_workers, cfg.renderer_workers, 0),
    };
    let fault_plan = match &opts.faults {
        Some(s) => apply_faults(
            s,
            &Topology {
                planners,
                renderers,
                fused: fused_units,
                tasks: m,
            },
        )?,
        None => FaultPlan::none(),
    };
    // An empty run has nothing to plan.
    let planners = if m == 0 { 0 } else { planners };
    let stages: Arc<dyn StageSet> = opts
        .stages
        .clone()
        .unwrap_or_else(|| Arc::new(SyntheticStages::new(cfg.clone())));
    let header = RunHeader::for_config(&cfg, Source::Realtime, policy);
    let mut metrics = match &opts.metrics_path {
        Some(p) => Some(MetricsWriter::create(p)?),
        None => None,
    };
    if let Some(w) = &mut metrics {
        w.write(&Line::Header(header.clone()))?;
    }
    let output = Arc::new(match &opts.output_path {
        Some(p) => OutputLog::create(p)?,
        None => OutputLog::in_memory(),
    });
    let clock = RunClock::start();
    let writer = BatchWriter::start(
        WriterParams {
            batch_size: cfg.batch_size,
            flush_interval_us: cfg.flush_interval_us,
            io_workers: cfg.io_workers,
            expected: m as usize,
        },
        stages.clone(),
        clock,
        output.clone(),
        metrics,
    )?;
    let (hb_tx, hb_rx) = match &cfg.supervisor {
        Some(_) => {
            let (tx, rx) = unbounded();
            (Some(tx), Some(rx))
        }
        None => (None, None),
    };
    let specs = cfg.tasks();
    let records = specs.iter().map(|s| (s.task_id, TaskRecord::new(s.task_id))).collect();
    let mut streams: BTreeMap<WorkerId, Stream> = (0..planners)
        .map(|p| {
            (
                p,
                Stream {
                    tasks: VecDeque::new(),
                    open: true,
                },
            )
        })
        .collect();
    let mut pool = VecDeque::new();
    if fused {
        pool.extend(specs);
    } else {
        for (k, spec) in specs.into_iter().enumerate() {
            streams
                .get_mut(&((k % planners.max(1) as usize) as WorkerId))
                .expect("at least one planner")
                .tasks
                .push_back(spec);
        }
    }
    let queue = BoundedQueue::new(cfg.queue_capacity.max(1));
    queue.register_producers(u64::from(planners));
    let shared = Arc::new(Shared {
        sync_store: policy == Policy::Serial || !cfg.async_store,
        stages,
        clock,
        queue,
        blocked: Mutex::new(0),
        streams: Mutex::new(streams),
        pool: Mutex::new(pool),
        inflight: Mutex::new(BTreeMap::new()),
        records: Mutex::new(records),
        writer: writer.handle(),
        heartbeats: hb_tx,
        heartbeat_us: cfg.supervisor.as_ref().map_or(10_000, |p| p.heartbeat_us()),
        faults: Arc::new(fault_plan),
        sched: Mutex::new(SchedulerState::new(
            planners,
            renderers,
            policy == Policy::DynamicPipeline,
        )),
        supervisor: Mutex::new(None),
        units: Mutex::new(BTreeMap::new()),
        idle: Condvar::new(),
        planners,
        threads: Mutex::new(Vec::new()),
        fatal: Mutex::new(None),
        cfg: cfg.clone(),
    });
    if let (Some(policy), Some(rx)) = (&cfg.supervisor, hb_rx) {
        let rt = SupervisorRuntime::start(
            policy.clone(),
            clock,
            rx,
            Box::new(ExecRespawner { shared: shared.clone() }),
        )?;
        *lock(&shared.supervisor) = Some(rt);
    }
    let launch_all = || -> std::io::Result<()> {
        match policy {
            Policy::Serial => shared.launch(0, Role::Serial, 0),
            _ if cfg.fused => (0..fused_units).try_for_each(|i| shared.launch(i, Role::Fused, 0)),
            _ => {
                (0..planners).try_for_each(|i| shared.launch(i, Role::Planner, 0))?;
                (0..renderers).try_for_each(|i| shared.launch(planners + i, Role::Renderer, 0))
            }
        }
    };
    launch_all()?;

    let mut trace = vec![(0, 0)];
    let mut g = lock(&shared.units);
    while g.values().any(|u| u.active) {
        g = shared
            .idle
            .wait_timeout(g, WAIT_TICK)
            .unwrap_or_else(|e| e.into_inner())
            .0;
        let depth = shared.queue.depth();
        if trace.last().map(|t| t.1) != Some(depth) {
            trace.push((shared.now(), depth));
        }
    }
    drop(g);

    let runtime = lock(&shared.supervisor).take();
    let supervisor_events = match runtime {
        Some(rt) => {
            let (mut sup, _) = rt.stop();
            debug!("rejected heartbeats: {}", sup.rejected_heartbeats());
            sup.take_events()
        }
        None => Vec::new(),
    };
    let leftover: Vec<TaskId> = lock(&shared.records).keys().copied().collect();
    for task in leftover {
        shared.finish(task, Outcome::Lost, None);
    }
    for t in std::mem::take(&mut *lock(&shared.threads)) {
        let _ = t.join();
    }
    let report = writer.finish();
    let fired = shared.faults.fired();
    let mut events = report.events;
    let extra: Vec<RunEvent> = supervisor_events
        .iter()
        .map(RunEvent::from)
        .chain(fired.iter().map(RunEvent::from))
        .collect();
    let mut metrics_out = report.metrics;
    if let Some(w) = &mut metrics_out {
        for e in &extra {
            w.write(&Line::Event(e.clone()))?;
        }
    }
    events.extend(extra);
    events.sort_by(|a, b| a.at_ms().total_cmp(&b.at_ms()));
    let run = RunMetrics::new(header, report.tasks, events);
    if let Some(w) = &mut metrics_out {
        w.write(&Line::Summary(run.summary.clone()))?;
    }
    if let Some(e) = report.error {
        return Err(ExecError::Output(e));
    }
    if let Some(e) = lock(&shared.fatal).take() {
        return Err(ExecError::Stage(e));
    }
    let queue = shared.queue.stats();
    if !fused && queue.enqueued + queue.requeued < queue.dequeued {
        return Err(ExecError::QueueClosedEarly);
    }
    Ok(RunOutput {
        metrics: run,
        output,
        queue,
        queue_depth_trace: trace,
        batches: report.batches,
        duplicates: report.duplicates,
        supervisor_events,
        faults: fired,
    })
}
