//! Worker nodes: slots that pull tasks from the master and run them whole.
//!
//! Each slot is one registered worker with one execution slot. It keeps a
//! heartbeat thread reporting to the master and, when the node runs a
//! supervisor, ships status heartbeats to it so hung slots are killed and
//! respawned locally. A respawned slot re-registers under the same
//! `(node_id, role, slot)` with a higher incarnation, which makes the
//! master requeue whatever it held.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Sender};
use log::{debug, info, warn};

use super::protocol::{Completion, Envelope, Message, Registration};
use super::store::ContextStore;
use super::transport::{Endpoint, EndpointTx};
use super::ClusterError;
use crate::clock::RunClock;
use crate::executor::RealPace;
use crate::metrics::{Outcome, SpanRecord, TaskRecord};
use crate::model::{
    hang_drawn, StageError, StageKind, StageSet, TaskId, TaskSpec, ValidatedConfig, WorkerId, WorkerRole,
};
use crate::supervisor::{
    ExecutionUnit, Heartbeat, Phase, Respawner, StatusMonitor, SupervisorEvent, SupervisorPolicy, SupervisorRuntime,
    ThreadUnit, UnitControl,
};
use crate::workloads::{FaultPlan, FiredFault};
use crate::{us_to_ms, Micros};

/// Opens a fresh connection to the master.
pub type Connector = Arc<dyn Fn() -> Result<Endpoint, ClusterError> + Send + Sync>;

#[derive(Clone)]
pub struct NodeOptions {
    pub node_id: String,
    pub role: WorkerRole,
    pub slots: u32,
    pub store: Option<ContextStore>,
    pub heartbeat_interval: Duration,
    pub supervisor: Option<SupervisorPolicy>,
    /// Faults addressed by slot index.
    pub faults: Arc<FaultPlan>,
    /// Re-send a request after waiting this long for its reply.
    pub reply_timeout: Duration,
}

impl NodeOptions {
    pub fn new(node_id: impl Into<String>, role: WorkerRole, slots: u32) -> Self {
        NodeOptions {
            node_id: node_id.into(),
            role,
            slots,
            store: None,
            heartbeat_interval: Duration::from_secs(1),
            supervisor: None,
            faults: Arc::new(FaultPlan::none()),
            reply_timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeReport {
    /// Tasks reported back as done, per outcome.
    pub completed: u64,
    pub pruned: u64,
    pub lost: u64,
    /// Tasks handed back because their context was missing.
    pub aborted: u64,
    pub supervisor_events: Vec<SupervisorEvent>,
    pub faults: Vec<FiredFault>,
    pub errors: Vec<String>,
}

#[derive(Default)]
struct SlotState {
    finished: bool,
    tx: Option<EndpointTx>,
    worker: Option<WorkerId>,
    current: Option<(TaskId, u32)>,
    control: Option<Arc<UnitControl>>,
}

struct Shared {
    cfg: Arc<ValidatedConfig>,
    stages: Arc<dyn StageSet>,
    opts: NodeOptions,
    connect: Connector,
    clock: RunClock,
    status_tx: Option<Sender<Heartbeat>>,
    slots: Mutex<Vec<SlotState>>,
    cv: Condvar,
    killed: AtomicBool,
    counts: [AtomicU64; 4],
    errors: Mutex<Vec<String>>,
    unsupervised: Mutex<Vec<ThreadUnit>>,
}

enum Exit {
    Shutdown,
    Killed,
    Crashed,
}

enum Stop {
    Killed,
    Crashed,
}

enum Exec {
    Done(Completion),
    Abort(String),
}

impl Shared {
    fn slot<R>(&self, slot: u32, f: impl FnOnce(&mut SlotState) -> R) -> R {
        let mut slots = self.slots.lock().unwrap();
        let r = f(&mut slots[slot as usize]);
        self.cv.notify_all();
        r
    }

    fn count(&self, i: usize) {
        self.counts[i].fetch_add(1, Ordering::Relaxed);
    }

    fn error(&self, e: String) {
        warn!("{e}");
        self.errors.lock().unwrap().push(e);
    }
}

fn stop_of(pace: &RealPace) -> Stop {
    if pace.crashed() {
        Stop::Crashed
    } else {
        Stop::Killed
    }
}

fn spawn_slot(sh: &Arc<Shared>, slot: u32, incarnation: u32) -> std::io::Result<ThreadUnit> {
    let s = sh.clone();
    ThreadUnit::spawn(format!("{}-slot{slot}", sh.opts.node_id), move |ctl| {
        s.slot(slot, |st| st.control = Some(ctl.clone()));
        let exit = slot_main(&s, slot, incarnation, &ctl);
        let finished = match exit {
            Ok(Exit::Shutdown) => true,
            Ok(Exit::Crashed) => s.opts.supervisor.is_none(),
            Ok(Exit::Killed) => s.killed.load(Ordering::Acquire),
            Err(e) => {
                if !ctl.is_killed() {
                    s.error(format!("slot {slot}: {e}"));
                }
                s.opts.supervisor.is_none() || !ctl.is_killed()
            }
        };
        if finished {
            s.slot(slot, |st| st.finished = true);
        }
    })
}

fn heartbeat_loop(
    tx: EndpointTx,
    worker: WorkerId,
    ctl: Arc<UnitControl>,
    done: Arc<AtomicBool>,
    completed: Arc<AtomicU64>,
    interval: Duration,
) {
    while !done.load(Ordering::Acquire) && !ctl.is_killed() {
        let msg = Message::Heartbeat {
            worker,
            in_flight: 0,
            completed: completed.load(Ordering::Relaxed),
        };
        if tx.send(msg).is_err() || ctl.sleep(interval) {
            return;
        }
    }
}

struct DoneOnDrop(Arc<AtomicBool>);

impl Drop for DoneOnDrop {
    fn drop(&mut self) {
        self.0.store(true, Ordering::Release);
    }
}

fn slot_main(sh: &Arc<Shared>, slot: u32, incarnation: u32, ctl: &Arc<UnitControl>) -> Result<Exit, ClusterError> {
    let opts = &sh.opts;
    let ep = (sh.connect)()?;
    ep.send(Message::Register(Registration {
        node_id: opts.node_id.clone(),
        role: opts.role,
        slot,
        capacity_slots: 1,
        incarnation,
        worker_id: None,
    }))?;
    let deadline = Instant::now() + opts.reply_timeout;
    let worker = loop {
        if ctl.is_killed() {
            return Ok(Exit::Killed);
        }
        match ep.recv(Duration::from_millis(20))? {
            Some(Envelope {
                msg: Message::Registered { worker },
                ..
            }) => break worker,
            Some(Envelope {
                msg: Message::Rejected { reason },
                ..
            }) => return Err(ClusterError::Rejected(reason)),
            Some(_) => {}
            None if Instant::now() > deadline => return Err(ClusterError::Timeout(opts.reply_timeout)),
            None => {}
        }
    };
    ep.tx().set_sender(u64::from(worker));
    debug!("{} slot {slot} registered as worker {worker}", opts.node_id);
    sh.slot(slot, |st| {
        st.tx = Some(ep.tx().clone());
        st.worker = Some(worker);
    });
    let done = Arc::new(AtomicBool::new(false));
    let _guard = DoneOnDrop(done.clone());
    let completed = Arc::new(AtomicU64::new(0));
    {
        let (tx, c, d, n, every) = (
            ep.tx().clone(),
            ctl.clone(),
            done.clone(),
            completed.clone(),
            opts.heartbeat_interval,
        );
        std::thread::Builder::new()
            .name(format!("{}-hb{slot}", opts.node_id))
            .spawn(move || heartbeat_loop(tx, worker, c, d, n, every))?;
    }
    let mut pace = RealPace::new(ctl.clone(), sh.clock).with_faults(opts.faults.clone(), opts.role, slot);
    if let (Some(tx), Some(p)) = (&sh.status_tx, &opts.supervisor) {
        let m = StatusMonitor::new(
            WorkerId::from(slot),
            incarnation,
            Some(tx.clone()),
            sh.clock,
            p.heartbeat_us(),
        );
        pace = pace.with_monitor(m);
    }
    pace.heartbeat(Phase::Idle);
    loop {
        if ctl.is_killed() {
            return Ok(Exit::Killed);
        }
        ep.send(Message::TaskRequest { worker })?;
        let Some(msg) = await_reply(&ep, &mut pace, opts.reply_timeout)? else {
            return Ok(match stop_of(&pace) {
                Stop::Crashed => Exit::Crashed,
                Stop::Killed => Exit::Killed,
            });
        };
        match msg {
            Message::TaskGrant { spec, attempt } => {
                sh.slot(slot, |st| st.current = Some((spec.task_id, attempt)));
                let r = execute(sh, &mut pace, &spec, attempt, worker);
                let msg = match r {
                    Ok(Exec::Done(c)) => {
                        sh.count(match c.outcome {
                            Outcome::Completed => 0,
                            Outcome::Pruned => 1,
                            Outcome::Lost => 2,
                        });
                        completed.fetch_add(1, Ordering::Relaxed);
                        Message::TaskDone(Box::new(c))
                    }
                    Ok(Exec::Abort(reason)) => {
                        sh.count(3);
                        Message::TaskAbort {
                            worker,
                            task_id: spec.task_id,
                            attempt,
                            reason,
                        }
                    }
                    Err(Stop::Killed) => return Ok(Exit::Killed),
                    Err(Stop::Crashed) => return Ok(Exit::Crashed),
                };
                if ctl.is_killed() {
                    return Ok(Exit::Killed);
                }
                ep.send(msg)?;
                sh.slot(slot, |st| st.current = None);
            }
            Message::NoTask { retry_after_ms } => {
                if pace.wait(Phase::Idle, retry_after_ms.max(1) * 1000, false).is_err() {
                    return Ok(match stop_of(&pace) {
                        Stop::Crashed => Exit::Crashed,
                        Stop::Killed => Exit::Killed,
                    });
                }
            }
            Message::Shutdown => {
                pace.finish();
                return Ok(Exit::Shutdown);
            }
            Message::Rejected { reason } => return Err(ClusterError::Rejected(reason)),
            _ => {}
        }
    }
}

/// Waits for the answer to a request while reporting idle progress.
/// `None` when the unit was killed or crashed meanwhile.
fn await_reply(ep: &Endpoint, pace: &mut RealPace, timeout: Duration) -> Result<Option<Message>, ClusterError> {
    let started = Instant::now();
    loop {
        if pace.is_killed() {
            return Ok(None);
        }
        if pace.poll_faults(None).is_err() {
            return Ok(None);
        }
        match ep.recv(Duration::from_millis(10))? {
            Some(env) => {
                if let m @ (Message::TaskGrant { .. }
                | Message::NoTask { .. }
                | Message::Shutdown
                | Message::Rejected { .. }) = env.msg
                {
                    return Ok(Some(m));
                }
            }
            None => {
                pace.heartbeat(Phase::Idle);
                if started.elapsed() > timeout {
                    return Ok(Some(Message::NoTask { retry_after_ms: 0 }));
                }
            }
        }
    }
}

fn execute(sh: &Shared, pace: &mut RealPace, spec: &TaskSpec, attempt: u32, worker: WorkerId) -> Result<Exec, Stop> {
    let t0 = sh.clock.now_us();
    let mut rec = TaskRecord::new(spec.task_id);
    rec.attempts = attempt;
    rec.worker_id = Some(worker);
    pace.poll_faults(Some(spec.task_id)).map_err(|_| stop_of(pace))?;
    let payload = match &sh.opts.store {
        None => None,
        Some(store) => match store.load(&spec.scene_ref) {
            Ok(b) => Some(b.len() as u64),
            Err(ClusterError::ContextNotFound(s)) => {
                info!("task {}: context {s} not found", spec.task_id);
                return Ok(Exec::Abort("context_not_found".into()));
            }
            Err(e) => return Ok(Exec::Abort(e.to_string())),
        },
    };
    let fin = |mut rec: TaskRecord, outcome: Outcome, stored| {
        rec.outcome = outcome;
        Exec::Done(Completion {
            worker,
            task_id: spec.task_id,
            attempt,
            outcome,
            stored,
            record: Some(rec),
        })
    };
    macro_rules! stage {
        ($kind:expr, $call:expr) => {
            match run_stage(sh, pace, spec, attempt, $kind, t0, worker, &mut rec, $call) {
                Ok(v) => v,
                Err(StageOutcome::Stop(s)) => return Err(s),
                Err(StageOutcome::Lost(e)) => {
                    if !e.is_task_loss() {
                        warn!("task {}: {e}", spec.task_id);
                    }
                    return Ok(fin(rec, Outcome::Lost, None));
                }
            }
        };
    }
    let st = sh.stages.clone();
    let mut scene = stage!(StageKind::Load, |p: &mut RealPace| st.load(spec, p));
    if let Some(n) = payload {
        scene.payload_bytes = n.max(1);
    }
    let scene = stage!(StageKind::Randomize, |p: &mut RealPace| st.randomize(spec, scene, p));
    let seq = stage!(StageKind::Plan, |p: &mut RealPace| st.plan(spec, &scene, p));
    rec.frames = seq.frame_count;
    rec.valid = seq.valid;
    if !seq.valid {
        return Ok(fin(rec, Outcome::Pruned, None));
    }
    let obs = stage!(StageKind::Render, |p: &mut RealPace| st.render(spec, &seq, p));
    let stored = stage!(StageKind::Store, |p: &mut RealPace| st.store(spec, &seq, &obs, p));
    Ok(fin(rec, Outcome::Completed, Some(stored)))
}

enum StageOutcome {
    Stop(Stop),
    Lost(StageError),
}

#[allow(clippy::too_many_arguments)]
fn run_stage<T>(
    sh: &Shared,
    pace: &mut RealPace,
    spec: &TaskSpec,
    attempt: u32,
    kind: StageKind,
    t0: Micros,
    worker: WorkerId,
    rec: &mut TaskRecord,
    f: impl FnOnce(&mut RealPace) -> Result<T, StageError>,
) -> Result<T, StageOutcome> {
    let start = sh.clock.now_us();
    if sh.opts.supervisor.is_some() && hang_drawn(spec, &sh.cfg, kind, attempt) {
        let _ = pace.hang();
        return Err(StageOutcome::Stop(Stop::Killed));
    }
    pace.heartbeat(Phase::Stage(kind));
    let r = f(pace);
    if pace.crashed() || pace.is_killed() {
        return Err(StageOutcome::Stop(stop_of(pace)));
    }
    let end = sh.clock.now_us();
    if pace.last_requested_us() > 0 {
        rec.spans.push(SpanRecord::new(kind, worker, start - t0, end - t0));
        rec.latency_ms.insert(kind, us_to_ms(end - start));
    }
    r.map_err(StageOutcome::Lost)
}

struct NodeRespawner {
    sh: Arc<Shared>,
}

impl Respawner for NodeRespawner {
    fn respawn(&mut self, worker: WorkerId, incarnation: u32) -> std::io::Result<Box<dyn ExecutionUnit>> {
        let slot = worker;
        self.sh.slot(slot, |st| {
            st.tx = None;
            st.current = None;
        });
        Ok(Box::new(spawn_slot(&self.sh, slot, incarnation)?))
    }

    fn abandon(&mut self, worker: WorkerId) {
        let slot = worker;
        let (tx, id, current) = self.sh.slot(slot, |st| {
            st.finished = true;
            (st.tx.take(), st.worker, st.current.take())
        });
        if let (Some(tx), Some(id), Some((task_id, attempt))) = (tx, id, current) {
            let _ = tx.send(Message::TaskAbort {
                worker: id,
                task_id,
                attempt,
                reason: "worker_dead".into(),
            });
        }
    }
}

/// A running worker node.
pub struct Node {
    sh: Arc<Shared>,
    supervisor: Option<SupervisorRuntime>,
}

impl Node {
    pub fn start(
        cfg: Arc<ValidatedConfig>,
        stages: Arc<dyn StageSet>,
        opts: NodeOptions,
        connect: Connector,
    ) -> Result<Node, ClusterError> {
        if opts.slots == 0 {
            return Err(ClusterError::Config("a node needs at least one slot".into()));
        }
        if opts.supervisor.is_none() && cfg.any_hangs() {
            return Err(ClusterError::Config("hang_prob > 0 requires a supervisor".into()));
        }
        if let Some(p) = &opts.supervisor {
            p.validate().map_err(ClusterError::Config)?;
        }
        let clock = RunClock::start();
        let (status_tx, status_rx) = unbounded();
        let sh = Arc::new(Shared {
            cfg,
            stages,
            connect,
            clock,
            status_tx: opts.supervisor.as_ref().map(|_| status_tx),
            slots: Mutex::new((0..opts.slots).map(|_| SlotState::default()).collect()),
            cv: Condvar::new(),
            killed: AtomicBool::new(false),
            counts: Default::default(),
            errors: Mutex::new(Vec::new()),
            unsupervised: Mutex::new(Vec::new()),
            opts,
        });
        let supervisor = match &sh.opts.supervisor {
            Some(p) => Some(SupervisorRuntime::start(
                p.clone(),
                clock,
                status_rx,
                Box::new(NodeRespawner { sh: sh.clone() }),
            )?),
            None => None,
        };
        for slot in 0..sh.opts.slots {
            let unit = spawn_slot(&sh, slot, 0)?;
            match &supervisor {
                Some(s) => s.register(WorkerId::from(slot), Box::new(unit)),
                None => sh.unsupervised.lock().unwrap().push(unit),
            }
        }
        Ok(Node { sh, supervisor })
    }

    pub fn is_finished(&self) -> bool {
        self.sh.slots.lock().unwrap().iter().all(|s| s.finished)
    }

    /// Stops every slot at once without telling the master, as if the
    /// node's processes were killed.
    pub fn kill(&self) {
        self.sh.killed.store(true, Ordering::Release);
        let mut slots = self.sh.slots.lock().unwrap();
        for s in slots.iter_mut() {
            if let Some(c) = &s.control {
                c.kill();
            }
            s.tx = None;
            s.finished = true;
        }
        self.sh.cv.notify_all();
    }

    /// Kills one slot without telling anyone.
    pub fn kill_slot(&self, slot: u32) {
        let slots = self.sh.slots.lock().unwrap();
        if let Some(c) = slots.get(slot as usize).and_then(|s| s.control.as_ref()) {
            c.kill();
        }
    }

    /// Blocks until every slot has finished, then stops the supervisor.
    pub fn wait(mut self) -> NodeReport {
        {
            let mut slots = self.sh.slots.lock().unwrap();
            while !slots.iter().all(|s| s.finished) {
                slots = self.sh.cv.wait(slots).unwrap();
            }
        }
        let mut report = NodeReport::default();
        if let Some(s) = self.supervisor.take() {
            let (mut sup, _) = s.stop();
            report.supervisor_events = sup.take_events();
            sup.shutdown();
        }
        let units = std::mem::take(&mut *self.sh.unsupervised.lock().unwrap());
        if !self.sh.killed.load(Ordering::Acquire) {
            for u in units {
                let _ = u.join();
            }
        }
        let c = &self.sh.counts;
        report.completed = c[0].load(Ordering::Relaxed);
        report.pruned = c[1].load(Ordering::Relaxed);
        report.lost = c[2].load(Ordering::Relaxed);
        report.aborted = c[3].load(Ordering::Relaxed);
        report.faults = self.sh.opts.faults.fired();
        report.errors = self.sh.errors.lock().unwrap().clone();
        report
    }
}

/// Runs a node until the master shuts it down.
pub fn run_node(
    cfg: Arc<ValidatedConfig>,
    stages: Arc<dyn StageSet>,
    opts: NodeOptions,
    connect: Connector,
) -> Result<NodeReport, ClusterError> {
    Ok(Node::start(cfg, stages, opts, connect)?.wait())
}
