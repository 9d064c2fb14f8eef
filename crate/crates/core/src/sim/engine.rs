use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use super::{ConcurrencyPoint, SimError, SimEvent, SimEventKind, SimResult};
use crate::metrics::{Outcome, Policy, RunEvent, SpanRecord, TaskRecord};
use crate::model::{
    hang_drawn, stage_load, stage_plan, stage_randomize, stage_render, stage_store, StageKind, StoredRecord, TaskDraws,
    TaskSpec, ValidatedConfig, VirtualPace, WorkerId,
};
use crate::scheduler::{Backlog, Decision, SchedulerState};
use crate::supervisor::SupervisorPolicy;
use crate::{us_to_ms, Micros};

/// Worker ids of the batch writer's I/O pool start here.
pub const IO_WORKER_BASE: WorkerId = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Planner,
    Renderer,
    Fused,
    Serial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UState {
    Idle,
    Busy {
        task: usize,
        pos: usize,
        start: Micros,
        hung: bool,
    },
    /// A planner holding a valid context it could not enqueue yet.
    Holding {
        task: usize,
    },
    Spawning,
    Exited,
    Dead,
}

#[derive(Debug)]
struct Unit {
    id: WorkerId,
    role: Role,
    state: UState,
    incarnation: u32,
    respawns: u32,
    stream: VecDeque<usize>,
    job: Vec<StageKind>,
}

impl Unit {
    fn new(id: WorkerId, role: Role, job: Vec<StageKind>) -> Self {
        Unit {
            id,
            role,
            state: UState::Idle,
            incarnation: 1,
            respawns: 0,
            stream: VecDeque::new(),
            job,
        }
    }

    /// Still able to produce contexts.
    fn producing(&self) -> bool {
        self.role == Role::Planner && !matches!(self.state, UState::Exited | UState::Dead)
    }
}

#[derive(Debug)]
struct Task {
    spec: TaskSpec,
    draws: TaskDraws,
    rec: TaskRecord,
    done: bool,
    /// Handed to the writer or finished.
    resolved: bool,
}

#[derive(Debug, Default)]
struct IoWorker {
    batch: Vec<usize>,
    pos: usize,
    start: Micros,
    batch_no: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    StageEnd { unit: usize, inc: u32 },
    StoreEnd { io: usize },
    FlushDue { gen: u64 },
    Kill { unit: usize, inc: u32 },
    Arrive { unit: usize },
}

impl Ev {
    fn prio(self) -> u8 {
        match self {
            Ev::StageEnd { .. } | Ev::StoreEnd { .. } => 0,
            Ev::FlushDue { .. } => 1,
            Ev::Kill { .. } => 2,
            Ev::Arrive { .. } => 4,
        }
    }

    fn subject(self) -> u64 {
        match self {
            Ev::StageEnd { unit, .. } | Ev::Kill { unit, .. } | Ev::Arrive { unit } => unit as u64,
            Ev::StoreEnd { io } => IO_WORKER_BASE as u64 + io as u64,
            Ev::FlushDue { gen } => gen,
        }
    }
}

struct Span {
    stage: StageKind,
    start: Micros,
    end: Micros,
}

pub(crate) struct Engine<'a> {
    cfg: &'a ValidatedConfig,
    policy: Policy,
    supervisor: Option<SupervisorPolicy>,
    keep_records: bool,
    now: Micros,
    seq: u64,
    heap: BinaryHeap<Reverse<(Micros, u8, u64, u64, Ev)>>,
    units: Vec<Unit>,
    tasks: Vec<Task>,
    queue: VecDeque<usize>,
    blocked: VecDeque<usize>,
    pool: VecDeque<usize>,
    sched: SchedulerState,
    pending: Vec<usize>,
    flush_gen: u64,
    batches: u64,
    io: Vec<IoWorker>,
    io_queue: VecDeque<(u64, Vec<usize>)>,
    /// Tasks neither finished nor handed to the writer.
    unsubmitted: usize,
    spans: Vec<Span>,
    instant: Vec<SimEvent>,
    timeline: Vec<SimEvent>,
    events: Vec<RunEvent>,
    finished: Vec<usize>,
    records: Vec<StoredRecord>,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(cfg: &'a ValidatedConfig, policy: Policy, keep_records: bool) -> Result<Self, SimError> {
        if cfg.any_hangs() && cfg.supervisor.is_none() {
            return Err(SimError::NonterminatingConfig);
        }
        let tasks: Vec<Task> = cfg
            .tasks()
            .into_iter()
            .map(|spec| Task {
                draws: TaskDraws::draw(&spec, cfg),
                rec: TaskRecord::new(spec.task_id),
                spec,
                done: false,
                resolved: false,
            })
            .collect();
        let sync_store = policy == Policy::Serial || !cfg.async_store;
        let mut front = vec![
            StageKind::Load,
            StageKind::Randomize,
            StageKind::Plan,
            StageKind::Render,
        ];
        if sync_store {
            front.push(StageKind::Store);
        }
        let mut units = Vec::new();
        let mut pool = VecDeque::new();
        let (planners, renderers) = match policy {
            Policy::Serial => {
                units.push(Unit::new(0, Role::Serial, front));
                pool.extend(0..tasks.len());
                (0, 0)
            }
            _ if cfg.fused => {
                for i in 0..cfg.renderer_workers {
                    units.push(Unit::new(i, Role::Fused, front.clone()));
                }
                pool.extend(0..tasks.len());
                (0, 0)
            }
            _ => {
                let p = if tasks.is_empty() { 0 } else { cfg.planner_workers };
                for i in 0..p {
                    units.push(Unit::new(i, Role::Planner, front[..3].to_vec()));
                }
                for k in 0..tasks.len() {
                    units[k % p as usize].stream.push_back(k);
                }
                let rjob = front[3..].to_vec();
                for i in 0..cfg.renderer_workers {
                    units.push(Unit::new(p + i, Role::Renderer, rjob.clone()));
                }
                (p, cfg.renderer_workers)
            }
        };
        let io = (0..cfg.io_workers).map(|_| IoWorker::default()).collect();
        Ok(Engine {
            cfg,
            policy,
            supervisor: cfg.supervisor.clone(),
            keep_records,
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            units,
            unsubmitted: tasks.len(),
            tasks,
            queue: VecDeque::new(),
            blocked: VecDeque::new(),
            pool,
            sched: SchedulerState::new(planners, renderers, policy == Policy::DynamicPipeline),
            pending: Vec::new(),
            flush_gen: 0,
            batches: 0,
            io,
            io_queue: VecDeque::new(),
            spans: Vec::new(),
            instant: Vec::new(),
            timeline: Vec::new(),
            events: Vec::new(),
            finished: Vec::new(),
            records: Vec::new(),
        })
    }

    fn schedule(&mut self, at: Micros, ev: Ev) {
        self.seq += 1;
        self.heap.push(Reverse((at, ev.prio(), ev.subject(), self.seq, ev)));
    }

    fn log(&mut self, kind: SimEventKind, worker: Option<WorkerId>, task: Option<usize>, stage: Option<StageKind>) {
        self.instant.push(SimEvent {
            time_us: self.now,
            kind,
            worker,
            task: task.map(|t| self.tasks[t].spec.task_id),
            stage,
        });
    }

    fn end_instant(&mut self) {
        self.instant
            .sort_by_key(|e| (e.kind.priority(), e.worker.unwrap_or(WorkerId::MAX)));
        self.timeline.append(&mut self.instant);
    }

    pub(crate) fn run(mut self) -> SimResult {
        self.dispatch();
        self.end_instant();
        while let Some(Reverse((at, _, _, _, ev))) = self.heap.pop() {
            self.now = at;
            self.handle(ev);
            while let Some(Reverse((t, ..))) = self.heap.peek() {
                if *t != at {
                    break;
                }
                let Reverse((_, _, _, _, ev)) = self.heap.pop().expect("peeked");
                self.handle(ev);
            }
            self.dispatch();
            self.end_instant();
        }
        self.finish()
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::StageEnd { unit, inc } => {
                if self.units[unit].incarnation != inc {
                    return;
                }
                if let UState::Busy {
                    task,
                    pos,
                    start,
                    hung: false,
                } = self.units[unit].state
                {
                    let stage = self.units[unit].job[pos];
                    self.log(
                        SimEventKind::StageEnd,
                        Some(self.units[unit].id),
                        Some(task),
                        Some(stage),
                    );
                    self.stage_done(unit, task, pos, start);
                }
            }
            Ev::StoreEnd { io } => self.store_done(io),
            Ev::FlushDue { gen } => {
                if gen == self.flush_gen && !self.pending.is_empty() {
                    self.flush();
                }
            }
            Ev::Kill { unit, inc } => self.kill(unit, inc),
            Ev::Arrive { unit } => {
                self.units[unit].state = UState::Idle;
                let id = self.units[unit].id;
                self.log(SimEventKind::WorkerSpawn, Some(id), None, None);
                self.events.push(RunEvent::WorkerJoined {
                    at_ms: us_to_ms(self.now),
                    worker: id,
                    role: crate::model::WorkerRole::Renderer,
                });
            }
        }
    }

    /// Starts stage `pos` of the unit's job on `task`, skipping zero-length
    /// stages.
    fn start_stage(&mut self, unit: usize, task: usize, mut pos: usize) {
        loop {
            if pos == self.units[unit].job.len() {
                self.job_done(unit, task);
                return;
            }
            let stage = self.units[unit].job[pos];
            let hung = self.supervisor.is_some()
                && hang_drawn(&self.tasks[task].spec, self.cfg, stage, self.tasks[task].rec.attempts);
            let d = self.tasks[task].draws.stage_us(stage);
            if hung {
                let policy = self.supervisor.as_ref().expect("checked");
                let (timeout, poll) = (policy.timeout_us(), policy.poll_us().max(1));
                let detect = ((self.now + timeout) / poll + 1) * poll;
                let u = &mut self.units[unit];
                u.state = UState::Busy {
                    task,
                    pos,
                    start: self.now,
                    hung: true,
                };
                let inc = u.incarnation;
                let id = u.id;
                self.log(SimEventKind::StageStart, Some(id), Some(task), Some(stage));
                self.schedule(detect, Ev::Kill { unit, inc });
                return;
            }
            if d == 0 {
                if !self.stage_effects(unit, task, stage) {
                    self.units[unit].state = UState::Idle;
                    return;
                }
                pos += 1;
                continue;
            }
            let u = &mut self.units[unit];
            u.state = UState::Busy {
                task,
                pos,
                start: self.now,
                hung: false,
            };
            let (inc, id) = (u.incarnation, u.id);
            self.log(SimEventKind::StageStart, Some(id), Some(task), Some(stage));
            self.schedule(self.now + d, Ev::StageEnd { unit, inc });
            return;
        }
    }

    fn stage_done(&mut self, unit: usize, task: usize, pos: usize, start: Micros) {
        let stage = self.units[unit].job[pos];
        let worker = self.units[unit].id;
        self.spans.push(Span {
            stage,
            start,
            end: self.now,
        });
        let t = &mut self.tasks[task];
        t.rec.spans.push(SpanRecord::new(stage, worker, start, self.now));
        t.rec.latency_ms.insert(stage, us_to_ms(self.now - start));
        if self.stage_effects(unit, task, stage) {
            self.start_stage(unit, task, pos + 1);
        } else {
            self.units[unit].state = UState::Idle;
        }
    }

    /// Applies the outcome of a finished stage. Returns false when the task
    /// leaves the unit's job early.
    fn stage_effects(&mut self, unit: usize, task: usize, stage: StageKind) -> bool {
        let worker = self.units[unit].id;
        let d = self.tasks[task].draws;
        match stage {
            StageKind::Load if d.load_failed => {
                self.tasks[task].rec.worker_id = Some(worker);
                self.finish_task(task, Outcome::Lost);
                false
            }
            StageKind::Plan => {
                let rec = &mut self.tasks[task].rec;
                rec.frames = d.frames;
                rec.valid = d.valid;
                rec.worker_id = Some(worker);
                if !d.valid {
                    self.finish_task(task, Outcome::Pruned);
                }
                d.valid
            }
            StageKind::Render => {
                self.tasks[task].rec.worker_id = Some(worker);
                true
            }
            StageKind::Store => {
                let outcome = if d.store_failed {
                    Outcome::Lost
                } else {
                    Outcome::Completed
                };
                self.finish_task(task, outcome);
                true
            }
            _ => true,
        }
    }

    fn finish_task(&mut self, task: usize, outcome: Outcome) {
        let t = &mut self.tasks[task];
        if t.done {
            return;
        }
        t.done = true;
        t.rec.outcome = outcome;
        if !std::mem::replace(&mut t.resolved, true) {
            self.unsubmitted -= 1;
        }
        self.finished.push(task);
        if outcome == Outcome::Completed && self.keep_records {
            self.records.push(materialize(&self.tasks[task].spec, self.cfg));
        }
    }

    fn job_done(&mut self, unit: usize, task: usize) {
        let role = self.units[unit].role;
        match role {
            Role::Planner => {
                self.units[unit].state = UState::Holding { task };
                self.blocked.push_back(unit);
            }
            _ => {
                self.units[unit].state = UState::Idle;
                if !self.tasks[task].done {
                    self.submit(task);
                }
            }
        }
    }

    fn submit(&mut self, task: usize) {
        self.tasks[task].resolved = true;
        self.unsubmitted -= 1;
        self.pending.push(task);
        if self.pending.len() >= self.cfg.batch_size {
            self.flush();
        } else if self.pending.len() == 1 {
            let gen = self.flush_gen;
            self.schedule(self.now + self.cfg.flush_interval_us, Ev::FlushDue { gen });
        }
    }

    fn flush(&mut self) {
        self.flush_gen += 1;
        let batch = std::mem::take(&mut self.pending);
        self.batches += 1;
        self.io_queue.push_back((self.batches, batch));
    }

    fn run_io(&mut self, io: usize) {
        loop {
            let w = &self.io[io];
            if w.pos == w.batch.len() {
                return;
            }
            let task = w.batch[w.pos];
            let d = self.tasks[task].draws.store_us;
            if d > 0 {
                self.io[io].start = self.now;
                self.log(
                    SimEventKind::StageStart,
                    Some(IO_WORKER_BASE + io as WorkerId),
                    Some(task),
                    Some(StageKind::Store),
                );
                self.schedule(self.now + d, Ev::StoreEnd { io });
                return;
            }
            self.io[io].pos += 1;
        }
    }

    fn store_done(&mut self, io: usize) {
        let worker = IO_WORKER_BASE + io as WorkerId;
        let (task, start) = (self.io[io].batch[self.io[io].pos], self.io[io].start);
        self.log(SimEventKind::StageEnd, Some(worker), Some(task), Some(StageKind::Store));
        self.spans.push(Span {
            stage: StageKind::Store,
            start,
            end: self.now,
        });
        let rec = &mut self.tasks[task].rec;
        rec.spans
            .push(SpanRecord::new(StageKind::Store, worker, start, self.now));
        rec.latency_ms.insert(StageKind::Store, us_to_ms(self.now - start));
        self.io[io].pos += 1;
        self.run_io(io);
        self.maybe_batch_done(io);
    }

    fn maybe_batch_done(&mut self, io: usize) {
        let w = &self.io[io];
        if w.batch.is_empty() || w.pos < w.batch.len() {
            return;
        }
        let batch = std::mem::take(&mut self.io[io].batch);
        self.io[io].pos = 0;
        self.log(SimEventKind::Flush, Some(IO_WORKER_BASE + io as WorkerId), None, None);
        self.events.push(RunEvent::Flush {
            at_ms: us_to_ms(self.now),
            batch: self.io[io].batch_no,
            records: batch.len() as u32,
        });
        for task in batch {
            let outcome = if self.tasks[task].draws.store_failed {
                Outcome::Lost
            } else {
                Outcome::Completed
            };
            self.finish_task(task, outcome);
        }
    }

    fn kill(&mut self, unit: usize, inc: u32) {
        let UState::Busy {
            task,
            pos,
            start,
            hung: true,
        } = self.units[unit].state
        else {
            return;
        };
        if self.units[unit].incarnation != inc {
            return;
        }
        let policy = self.supervisor.clone().expect("hangs imply a supervisor");
        let stage = self.units[unit].job[pos];
        let worker = self.units[unit].id;
        let now = self.now;
        self.log(SimEventKind::HeartbeatTick, Some(worker), None, None);
        self.log(SimEventKind::WorkerKill, Some(worker), Some(task), Some(stage));
        if now > start {
            self.spans.push(Span { stage, start, end: now });
        }
        self.tasks[task]
            .rec
            .spans
            .push(SpanRecord::new(stage, worker, start, now).killed());
        self.events.push(RunEvent::HangDetected {
            at_ms: us_to_ms(now),
            worker,
            incarnation: inc,
            last_seen_ms: us_to_ms(start),
        });
        self.events.push(RunEvent::Killed {
            at_ms: us_to_ms(now),
            worker,
            incarnation: inc,
        });
        self.tasks[task].rec.attempts += 1;
        let u = &mut self.units[unit];
        if u.respawns < policy.max_respawns {
            u.respawns += 1;
            u.incarnation += 1;
            let inc = u.incarnation;
            self.events.push(RunEvent::Respawned {
                at_ms: us_to_ms(now),
                worker,
                incarnation: inc,
            });
            self.start_stage(unit, task, 0);
            return;
        }
        u.state = UState::Dead;
        let respawns = u.respawns;
        self.events.push(RunEvent::BudgetExhausted {
            at_ms: us_to_ms(now),
            worker,
            respawns,
        });
        self.requeued(task, "budget_exhausted");
        match self.units[unit].role {
            Role::Renderer => {
                self.sched.on_renderer_exit(worker);
                self.queue.push_back(task);
            }
            Role::Planner => {
                self.sched.on_planner_dead(worker);
                let mut stream = std::mem::take(&mut self.units[unit].stream);
                stream.push_front(task);
                let heir = (0..self.units.len())
                    .filter(|&i| self.units[i].producing())
                    .min_by_key(|&i| (self.units[i].stream.len(), i));
                match heir {
                    Some(h) => self.units[h].stream.extend(stream),
                    None => {
                        for t in stream {
                            self.finish_task(t, Outcome::Lost);
                        }
                    }
                }
            }
            Role::Fused | Role::Serial => self.pool.push_front(task),
        }
    }

    fn requeued(&mut self, task: usize, reason: &str) {
        self.events.push(RunEvent::Requeued {
            at_ms: us_to_ms(self.now),
            task_id: self.tasks[task].spec.task_id,
            attempt: self.tasks[task].rec.attempts,
            reason: reason.to_string(),
        });
    }

    fn drained(&self) -> bool {
        self.queue.is_empty() && !self.units.iter().any(Unit::producing)
    }

    fn dispatch(&mut self) {
        loop {
            let mut changed = false;
            while self.queue.len() < self.cfg.queue_capacity {
                let Some(unit) = self.blocked.pop_front() else { break };
                let UState::Holding { task } = self.units[unit].state else {
                    continue;
                };
                self.queue.push_back(task);
                self.units[unit].state = UState::Idle;
                changed = true;
            }
            for unit in 0..self.units.len() {
                if self.units[unit].state != UState::Idle {
                    continue;
                }
                match self.units[unit].role {
                    Role::Planner => {
                        if let Some(task) = self.units[unit].stream.pop_front() {
                            self.start_stage(unit, task, 0);
                        } else {
                            self.planner_exit(unit);
                        }
                        changed = true;
                    }
                    Role::Renderer => {
                        if let Some(task) = self.queue.pop_front() {
                            let id = self.units[unit].id;
                            self.log(SimEventKind::TaskAssign, Some(id), Some(task), None);
                            self.start_stage(unit, task, 0);
                            changed = true;
                        } else if self.drained() {
                            self.units[unit].state = UState::Exited;
                            let id = self.units[unit].id;
                            self.sched.on_renderer_exit(id);
                            changed = true;
                        }
                    }
                    Role::Fused | Role::Serial => {
                        if let Some(task) = self.pool.pop_front() {
                            let id = self.units[unit].id;
                            self.log(SimEventKind::TaskAssign, Some(id), Some(task), None);
                            self.start_stage(unit, task, 0);
                            changed = true;
                        }
                    }
                }
            }
            if self.unsubmitted == 0 && !self.pending.is_empty() {
                self.flush();
                changed = true;
            }
            for io in 0..self.io.len() {
                if self.io[io].batch.is_empty() {
                    if let Some((no, batch)) = self.io_queue.pop_front() {
                        self.io[io] = IoWorker {
                            batch,
                            pos: 0,
                            start: self.now,
                            batch_no: no,
                        };
                        self.run_io(io);
                        self.maybe_batch_done(io);
                        changed = true;
                    }
                }
            }
            if !changed {
                return;
            }
        }
    }

    fn planner_exit(&mut self, unit: usize) {
        let id = self.units[unit].id;
        self.units[unit].state = UState::Exited;
        self.log(SimEventKind::PlannerExit, Some(id), None, None);
        let in_render = self
            .units
            .iter()
            .filter(|u| u.role == Role::Renderer && matches!(u.state, UState::Busy { .. }))
            .count() as u64;
        let backlog = Backlog {
            queued: (self.queue.len() + self.blocked.len()) as u64,
            in_render,
        };
        let decision = self
            .sched
            .on_planner_exit(id, backlog, self.now)
            .expect("exiting planner is live");
        let entry = self.sched.reallocation_log.last().expect("just logged").to_event();
        self.events.push(entry);
        if let Decision::SpawnRenderer { renderer } = decision {
            let job = self
                .units
                .iter()
                .find(|u| u.role == Role::Renderer)
                .map(|u| u.job.clone())
                .unwrap_or_else(|| vec![StageKind::Render]);
            let mut u = Unit::new(renderer, Role::Renderer, job);
            u.state = UState::Spawning;
            self.units.push(u);
            let idx = self.units.len() - 1;
            self.schedule(self.now + self.cfg.spawn_latency_us, Ev::Arrive { unit: idx });
        }
    }

    fn finish(mut self) -> SimResult {
        let unfinished: Vec<usize> = (0..self.tasks.len()).filter(|&t| !self.tasks[t].done).collect();
        for t in unfinished {
            self.finish_task(t, Outcome::Lost);
        }
        let mut busy = [0; 5];
        for s in &self.spans {
            busy[s.stage.index()] += s.end - s.start;
        }
        let flushed = self
            .timeline
            .iter()
            .filter(|e| e.kind == SimEventKind::Flush)
            .map(|e| e.time_us);
        let makespan = self.spans.iter().map(|s| s.end).chain(flushed).max().unwrap_or(0);
        let concurrency_trace = concurrency(&self.spans);
        let count = |o| self.tasks.iter().filter(|t| t.rec.outcome == o).count() as u64;
        let (completed, pruned, lost) = (count(Outcome::Completed), count(Outcome::Pruned), count(Outcome::Lost));
        let mut recs: Vec<Option<TaskRecord>> = self.tasks.drain(..).map(|t| Some(t.rec)).collect();
        let ordered = self.finished.iter().filter_map(|&i| recs[i].take()).collect();
        SimResult {
            policy: self.policy,
            makespan_us: makespan,
            per_stage_busy_us: busy,
            concurrency_trace,
            completed,
            pruned,
            lost,
            timeline: self.timeline,
            tasks: ordered,
            events: self.events,
            records: self.records,
        }
    }
}

fn concurrency(spans: &[Span]) -> Vec<ConcurrencyPoint> {
    let mut edges: Vec<(Micros, bool, StageKind)> = Vec::with_capacity(spans.len() * 2);
    for s in spans {
        edges.push((s.start, true, s.stage));
        edges.push((s.end, false, s.stage));
    }
    edges.sort_by_key(|&(t, up, s)| (t, up, s.index()));
    let mut counts = [0u32; 5];
    let mut out: Vec<ConcurrencyPoint> = Vec::new();
    for (t, up, s) in edges {
        if up {
            counts[s.index()] += 1;
        } else {
            counts[s.index()] -= 1;
        }
        match out.last_mut() {
            Some(p) if p.time_us == t => p.counts = counts,
            _ => out.push(ConcurrencyPoint { time_us: t, counts }),
        }
    }
    out
}

/// The record a completed task leaves in the output log.
pub(crate) fn materialize(spec: &TaskSpec, cfg: &ValidatedConfig) -> StoredRecord {
    let mut pace = VirtualPace::new();
    let scene = stage_load(spec, cfg, &mut pace).expect("completed task loaded");
    let scene = stage_randomize(spec, scene, cfg, &mut pace).expect("virtual pace");
    let seq = stage_plan(spec, &scene, cfg, &mut pace).expect("virtual pace");
    let obs = stage_render(spec, &seq, cfg, &mut pace).expect("completed task is valid");
    stage_store(spec, &seq, &obs, cfg, &mut pace).expect("completed task stored")
}
