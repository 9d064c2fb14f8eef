//! The master's task and worker bookkeeping.
//!
//! A pure state machine: callers pass the current time with every event and
//! deliver events one at a time, so the same code runs behind a network
//! event loop and inside the virtual-time driver.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use log::{debug, info};
use serde::Serialize;

use super::protocol::{Completion, Envelope, Message, Registration, MASTER_ID};
use super::ClusterError;
use crate::metrics::{Outcome, RunEvent, TaskRecord};
use crate::model::{ClusterTimeouts, StoredRecord, TaskId, TaskSpec, WorkerId, WorkerRole};
use crate::{us_to_ms, Micros};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Liveness {
    Alive,
    Suspect,
    Dead,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerDescriptor {
    pub worker_id: WorkerId,
    pub node_id: String,
    pub role: WorkerRole,
    pub slot: u32,
    pub capacity_slots: u32,
    pub in_flight: u32,
    pub last_heartbeat_ms: f64,
    pub state: Liveness,
    pub incarnation: u32,
    pub completed: u64,
    /// Wall time from grant to completion, summed over finished tasks.
    pub busy_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentStatus {
    Pending,
    Assigned,
    Done,
    Requeued,
    Lost,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskAssignment {
    pub task_id: TaskId,
    pub worker_id: Option<WorkerId>,
    pub assigned_at_ms: f64,
    pub attempt: u32,
    pub status: AssignmentStatus,
}

/// How pulled requests are matched with pending tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dispatch {
    /// The least relatively loaded requester gets the next pending task.
    LeastLoaded,
    /// Task `k` belongs to the `k mod workers`-th registered worker. Requeued
    /// tasks go to whoever asks.
    RoundRobin { workers: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Grant { spec: TaskSpec, attempt: u32 },
    NoTask,
    Shutdown,
}

impl Reply {
    pub fn into_message(self, retry_after_ms: u64) -> Message {
        match self {
            Reply::Grant { spec, attempt } => Message::TaskGrant { spec, attempt },
            Reply::NoTask => Message::NoTask { retry_after_ms },
            Reply::Shutdown => Message::Shutdown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    Granted,
    Finished,
    /// The holder lost the task (dead, aborted or replaced).
    Released,
    Lost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogEntry {
    pub at_us: Micros,
    pub task_id: TaskId,
    pub worker: Option<WorkerId>,
    pub attempt: u32,
    pub kind: LogKind,
}

struct TaskSlot {
    spec: TaskSpec,
    assign: TaskAssignment,
    assigned_at_us: Micros,
    record: Option<TaskRecord>,
}

struct Worker {
    desc: WorkerDescriptor,
    key: (String, WorkerRole, u32),
    holding: BTreeSet<TaskId>,
    last_heartbeat_us: Micros,
    last_seq: Option<u64>,
    position: usize,
}

impl Worker {
    fn free(&self) -> bool {
        self.desc.state == Liveness::Alive && (self.holding.len() as u32) < self.desc.capacity_slots
    }
}

pub struct Master {
    timeouts: ClusterTimeouts,
    dispatch: Dispatch,
    retry_after_ms: u64,
    tasks: BTreeMap<TaskId, TaskSlot>,
    pending: VecDeque<TaskId>,
    bound: Vec<VecDeque<TaskId>>,
    workers: BTreeMap<WorkerId, Worker>,
    keys: HashMap<(String, WorkerRole, u32), WorkerId>,
    waiting: BTreeMap<WorkerId, u32>,
    next_id: WorkerId,
    registered: usize,
    log: Vec<LogEntry>,
    events: Vec<RunEvent>,
    stored: BTreeMap<TaskId, StoredRecord>,
    duplicates: u64,
    stale_heartbeats: u64,
    egress_bytes: u64,
    grant_bytes: u64,
    grants: u64,
    max_grant_bytes: usize,
}

impl Master {
    pub fn new(tasks: Vec<TaskSpec>, timeouts: ClusterTimeouts, dispatch: Dispatch) -> Self {
        let mut bound = Vec::new();
        let mut pending = VecDeque::new();
        match dispatch {
            Dispatch::LeastLoaded => pending.extend(tasks.iter().map(|t| t.task_id)),
            Dispatch::RoundRobin { workers } => {
                let w = workers.max(1) as usize;
                bound = vec![VecDeque::new(); w];
                for (k, t) in tasks.iter().enumerate() {
                    bound[k % w].push_back(t.task_id);
                }
            }
        }
        let tasks = tasks
            .into_iter()
            .map(|spec| {
                let id = spec.task_id;
                let slot = TaskSlot {
                    spec,
                    assign: TaskAssignment {
                        task_id: id,
                        worker_id: None,
                        assigned_at_ms: 0.0,
                        attempt: 1,
                        status: AssignmentStatus::Pending,
                    },
                    assigned_at_us: 0,
                    record: None,
                };
                (id, slot)
            })
            .collect();
        Master {
            timeouts,
            dispatch,
            retry_after_ms: 50,
            tasks,
            pending,
            bound,
            workers: BTreeMap::new(),
            keys: HashMap::new(),
            waiting: BTreeMap::new(),
            next_id: 0,
            registered: 0,
            log: Vec::new(),
            events: Vec::new(),
            stored: BTreeMap::new(),
            duplicates: 0,
            stale_heartbeats: 0,
            egress_bytes: 0,
            grant_bytes: 0,
            grants: 0,
            max_grant_bytes: 0,
        }
    }

    pub fn with_retry_after(mut self, ms: u64) -> Self {
        self.retry_after_ms = ms;
        self
    }

    pub fn timeouts(&self) -> &ClusterTimeouts {
        &self.timeouts
    }

    pub fn retry_after_ms(&self) -> u64 {
        self.retry_after_ms
    }

    /// Registers a worker. Re-registering the same `(node_id, role, slot)`
    /// returns the same id; a higher incarnation means the worker restarted,
    /// so whatever it held is requeued.
    pub fn register(&mut self, reg: &Registration, now_us: Micros) -> Result<WorkerId, ClusterError> {
        let key = (reg.node_id.clone(), reg.role, reg.slot);
        let existing = self
            .keys
            .get(&key)
            .copied()
            .filter(|id| self.workers[id].desc.state != Liveness::Dead);
        if let Some(asked) = reg.worker_id {
            if let Some(w) = self.workers.get(&asked) {
                if w.key != key {
                    return Err(ClusterError::DuplicateWorkerId(asked));
                }
            }
        }
        if let Some(id) = existing {
            let restarted = {
                let w = self.workers.get_mut(&id).expect("keyed worker exists");
                w.last_heartbeat_us = now_us;
                w.desc.last_heartbeat_ms = us_to_ms(now_us);
                w.desc.capacity_slots = reg.capacity_slots.max(1);
                w.desc.state = Liveness::Alive;
                if reg.incarnation > w.desc.incarnation {
                    w.desc.incarnation = reg.incarnation;
                    w.last_seq = None;
                    true
                } else {
                    false
                }
            };
            if restarted {
                self.release_all(id, "worker_restarted", now_us);
            }
            return Ok(id);
        }
        let id = match reg.worker_id {
            Some(asked) if !self.workers.contains_key(&asked) => asked,
            _ => {
                while self.workers.contains_key(&self.next_id) {
                    self.next_id += 1;
                }
                self.next_id
            }
        };
        self.next_id = self.next_id.max(id + 1);
        self.workers.insert(
            id,
            Worker {
                desc: WorkerDescriptor {
                    worker_id: id,
                    node_id: reg.node_id.clone(),
                    role: reg.role,
                    slot: reg.slot,
                    capacity_slots: reg.capacity_slots.max(1),
                    in_flight: 0,
                    last_heartbeat_ms: us_to_ms(now_us),
                    state: Liveness::Alive,
                    incarnation: reg.incarnation,
                    completed: 0,
                    busy_ms: 0.0,
                },
                key: key.clone(),
                holding: BTreeSet::new(),
                last_heartbeat_us: now_us,
                last_seq: None,
                position: self.registered,
            },
        );
        self.registered += 1;
        self.keys.insert(key, id);
        info!(
            "worker {id} registered ({} {} slot {})",
            reg.node_id, reg.role, reg.slot
        );
        self.events.push(RunEvent::WorkerJoined {
            at_ms: us_to_ms(now_us),
            worker: id,
            role: reg.role,
        });
        Ok(id)
    }

    /// Records a heartbeat. Returns `false` when it was stale or came from a
    /// dead worker.
    pub fn heartbeat(&mut self, worker: WorkerId, seq: u64, now_us: Micros) -> Result<bool, ClusterError> {
        let w = self
            .workers
            .get_mut(&worker)
            .ok_or(ClusterError::UnknownWorker(worker))?;
        if w.desc.state == Liveness::Dead {
            return Ok(false);
        }
        if w.last_seq.is_some_and(|last| seq <= last) {
            self.stale_heartbeats += 1;
            return Ok(false);
        }
        w.last_seq = Some(seq);
        w.last_heartbeat_us = now_us;
        w.desc.last_heartbeat_ms = us_to_ms(now_us);
        if w.desc.state == Liveness::Suspect {
            debug!("worker {worker} alive again");
            w.desc.state = Liveness::Alive;
        }
        Ok(true)
    }

    /// Queues a pull from `worker`; answered by the next [`Master::dispatch`].
    pub fn request(&mut self, worker: WorkerId) -> Result<(), ClusterError> {
        let w = self.workers.get(&worker).ok_or(ClusterError::UnknownWorker(worker))?;
        if w.desc.state != Liveness::Alive {
            return Err(ClusterError::WorkerNotAlive {
                worker,
                state: w.desc.state,
            });
        }
        *self.waiting.entry(worker).or_default() += 1;
        Ok(())
    }

    fn take_request(&mut self, worker: WorkerId) {
        if let Some(n) = self.waiting.get_mut(&worker) {
            *n -= 1;
            if *n == 0 {
                self.waiting.remove(&worker);
            }
        }
    }

    fn least_loaded_requester(&self) -> Option<WorkerId> {
        self.waiting
            .keys()
            .filter_map(|id| self.workers.get(id).filter(|w| w.free()))
            .min_by(|a, b| {
                let la = a.holding.len() as u64 * u64::from(b.desc.capacity_slots);
                let lb = b.holding.len() as u64 * u64::from(a.desc.capacity_slots);
                la.cmp(&lb).then(a.desc.worker_id.cmp(&b.desc.worker_id))
            })
            .map(|w| w.desc.worker_id)
    }

    /// Answers every queued pull: grants where tasks and slots are available,
    /// `NoTask` otherwise, `Shutdown` once every task is resolved.
    pub fn dispatch(&mut self, now_us: Micros) -> Vec<(WorkerId, Reply)> {
        let mut replies = Vec::new();
        match self.dispatch {
            Dispatch::LeastLoaded => {
                while self.has_open_pending() {
                    let Some(w) = self.least_loaded_requester() else { break };
                    let task = self.pop_open(None).expect("open task pending");
                    self.take_request(w);
                    replies.push((w, self.grant(task, w, now_us)));
                }
            }
            Dispatch::RoundRobin { .. } => {
                let ids: Vec<WorkerId> = self.waiting.keys().copied().collect();
                for w in ids {
                    while self.waiting.contains_key(&w) && self.workers[&w].free() {
                        let pos = self.workers[&w].position;
                        let task = self.pop_open(Some(pos));
                        let Some(task) = task else { break };
                        self.take_request(w);
                        replies.push((w, self.grant(task, w, now_us)));
                    }
                }
            }
        }
        let finished = self.is_finished();
        for (w, n) in std::mem::take(&mut self.waiting) {
            for _ in 0..n {
                replies.push((w, if finished { Reply::Shutdown } else { Reply::NoTask }));
            }
        }
        replies
    }

    fn is_open(&self, task: TaskId) -> bool {
        self.tasks
            .get(&task)
            .is_some_and(|s| matches!(s.assign.status, AssignmentStatus::Pending | AssignmentStatus::Requeued))
    }

    fn has_open_pending(&mut self) -> bool {
        while let Some(&t) = self.pending.front() {
            if self.is_open(t) {
                return true;
            }
            self.pending.pop_front();
        }
        false
    }

    /// Next grantable task: requeued work first, then the worker's bound
    /// queue when dispatching round-robin.
    fn pop_open(&mut self, position: Option<usize>) -> Option<TaskId> {
        if self.has_open_pending() {
            return self.pending.pop_front();
        }
        let q = self.bound.get_mut(position?)?;
        while let Some(t) = q.pop_front() {
            let open = self
                .tasks
                .get(&t)
                .is_some_and(|s| matches!(s.assign.status, AssignmentStatus::Pending | AssignmentStatus::Requeued));
            if open {
                return Some(t);
            }
        }
        None
    }

    fn grant(&mut self, task: TaskId, worker: WorkerId, now_us: Micros) -> Reply {
        let slot = self.tasks.get_mut(&task).expect("queued tasks exist");
        slot.assign.worker_id = Some(worker);
        slot.assign.assigned_at_ms = us_to_ms(now_us);
        slot.assign.status = AssignmentStatus::Assigned;
        slot.assigned_at_us = now_us;
        let attempt = slot.assign.attempt;
        let reply = Reply::Grant {
            spec: slot.spec.clone(),
            attempt,
        };
        let w = self.workers.get_mut(&worker).expect("granted worker exists");
        w.holding.insert(task);
        w.desc.in_flight = w.holding.len() as u32;
        self.log.push(LogEntry {
            at_us: now_us,
            task_id: task,
            worker: Some(worker),
            attempt,
            kind: LogKind::Granted,
        });
        let bytes = Envelope {
            seq: 0,
            sender: MASTER_ID,
            msg: reply.clone().into_message(self.retry_after_ms),
        }
        .encode()
        .len()
            + 4;
        self.grant_bytes += bytes as u64;
        self.grants += 1;
        self.max_grant_bytes = self.max_grant_bytes.max(bytes);
        reply
    }

    /// Accounts bytes the master sent.
    pub fn note_egress(&mut self, bytes: usize) {
        self.egress_bytes += bytes as u64;
    }

    /// Records a completion report. Span times in the report are relative
    /// to the grant and are shifted onto the master's clock. Returns `true` for the first report of a
    /// still-open task; later reports are counted as duplicates.
    pub fn complete(&mut self, c: Completion, now_us: Micros) -> bool {
        if let Some(w) = self.workers.get_mut(&c.worker) {
            w.holding.remove(&c.task_id);
            w.desc.in_flight = w.holding.len() as u32;
        }
        let Some(slot) = self.tasks.get_mut(&c.task_id) else {
            return false;
        };
        if matches!(slot.assign.status, AssignmentStatus::Done | AssignmentStatus::Lost) {
            self.duplicates += 1;
            return false;
        }
        let holder = slot.assign.worker_id;
        slot.assign.status = if c.outcome == Outcome::Lost {
            AssignmentStatus::Lost
        } else {
            AssignmentStatus::Done
        };
        let attempt = slot.assign.attempt;
        let started = slot.assigned_at_us;
        let mut record = c.record.unwrap_or_else(|| TaskRecord::new(c.task_id));
        let offset = us_to_ms(started);
        for span in &mut record.spans {
            span.start_ms += offset;
            span.end_ms += offset;
        }
        record.outcome = c.outcome;
        record.attempts = attempt;
        record.worker_id = Some(c.worker);
        slot.record = Some(record);
        if let Some(s) = c.stored {
            if self.stored.insert(c.task_id, s).is_some() {
                self.duplicates += 1;
            }
        }
        if holder == Some(c.worker) {
            if let Some(w) = self.workers.get_mut(&c.worker) {
                w.desc.completed += 1;
                w.desc.busy_ms += us_to_ms(now_us.saturating_sub(started));
            }
        }
        self.log.push(LogEntry {
            at_us: now_us,
            task_id: c.task_id,
            worker: Some(c.worker),
            attempt,
            kind: if c.outcome == Outcome::Lost {
                LogKind::Lost
            } else {
                LogKind::Finished
            },
        });
        true
    }

    /// The worker gave the task back, e.g. because its context was missing.
    pub fn abort(&mut self, worker: WorkerId, task: TaskId, reason: &str, now_us: Micros) -> bool {
        let held = self.workers.get_mut(&worker).is_some_and(|w| {
            let had = w.holding.remove(&task);
            w.desc.in_flight = w.holding.len() as u32;
            had
        });
        let current = self
            .tasks
            .get(&task)
            .is_some_and(|s| s.assign.status == AssignmentStatus::Assigned && s.assign.worker_id == Some(worker));
        if held && current {
            self.requeue(task, reason, now_us);
        }
        held && current
    }

    /// Puts an assigned task back at the front of the queue with the next
    /// attempt number, or marks it lost once `max_attempts` is spent.
    fn requeue(&mut self, task: TaskId, reason: &str, now_us: Micros) {
        let max = self.timeouts.max_attempts;
        let slot = self.tasks.get_mut(&task).expect("requeued tasks exist");
        self.log.push(LogEntry {
            at_us: now_us,
            task_id: task,
            worker: slot.assign.worker_id,
            attempt: slot.assign.attempt,
            kind: LogKind::Released,
        });
        slot.assign.attempt += 1;
        let attempt = slot.assign.attempt;
        if attempt > max {
            slot.assign.status = AssignmentStatus::Lost;
            let mut rec = TaskRecord::new(task);
            rec.attempts = attempt - 1;
            rec.worker_id = slot.assign.worker_id;
            slot.record = Some(rec);
            self.log.push(LogEntry {
                at_us: now_us,
                task_id: task,
                worker: None,
                attempt: attempt - 1,
                kind: LogKind::Lost,
            });
            info!("task {task} lost after {max} attempts");
            return;
        }
        slot.assign.status = AssignmentStatus::Requeued;
        self.pending.push_front(task);
        self.events.push(RunEvent::Requeued {
            at_ms: us_to_ms(now_us),
            task_id: task,
            attempt,
            reason: reason.to_string(),
        });
    }

    fn release_all(&mut self, worker: WorkerId, reason: &str, now_us: Micros) -> Vec<TaskId> {
        let held: Vec<TaskId> = match self.workers.get_mut(&worker) {
            Some(w) => {
                let h = std::mem::take(&mut w.holding).into_iter().collect();
                w.desc.in_flight = 0;
                h
            }
            None => return Vec::new(),
        };
        let mut requeued = Vec::new();
        for t in held {
            let open = self
                .tasks
                .get(&t)
                .is_some_and(|s| s.assign.status == AssignmentStatus::Assigned && s.assign.worker_id == Some(worker));
            if open {
                self.requeue(t, reason, now_us);
                requeued.push(t);
            }
        }
        requeued
    }

    /// Marks silent workers Suspect, then Dead, requeueing what dead workers
    /// held. Returns the requeued task ids.
    pub fn poll_liveness(&mut self, now_us: Micros) -> Vec<TaskId> {
        let suspect = self.timeouts.suspect_timeout_ms * 1000;
        let dead = self.timeouts.dead_timeout_ms * 1000;
        let mut died = Vec::new();
        for (id, w) in self.workers.iter_mut() {
            if w.desc.state == Liveness::Dead {
                continue;
            }
            let silent = now_us.saturating_sub(w.last_heartbeat_us);
            if silent > dead {
                w.desc.state = Liveness::Dead;
                died.push(*id);
            } else if silent > suspect && w.desc.state == Liveness::Alive {
                debug!("worker {id} suspect after {} ms", silent / 1000);
                w.desc.state = Liveness::Suspect;
            }
        }
        let mut requeued = Vec::new();
        for id in died {
            info!("worker {id} dead");
            self.waiting.remove(&id);
            requeued.extend(self.release_all(id, "worker_dead", now_us));
        }
        requeued
    }

    pub fn is_finished(&self) -> bool {
        self.tasks
            .values()
            .all(|s| matches!(s.assign.status, AssignmentStatus::Done | AssignmentStatus::Lost))
    }

    pub fn count(&self, outcome: Outcome) -> u64 {
        self.tasks
            .values()
            .filter(|s| match outcome {
                Outcome::Lost => s.assign.status == AssignmentStatus::Lost,
                o => s.record.as_ref().is_some_and(|r| r.outcome == o),
            })
            .count() as u64
    }

    pub fn worker(&self, id: WorkerId) -> Option<&WorkerDescriptor> {
        self.workers.get(&id).map(|w| &w.desc)
    }

    pub fn workers(&self) -> impl Iterator<Item = &WorkerDescriptor> {
        self.workers.values().map(|w| &w.desc)
    }

    pub fn assignment(&self, task: TaskId) -> Option<&TaskAssignment> {
        self.tasks.get(&task).map(|s| &s.assign)
    }

    pub fn assignments(&self) -> impl Iterator<Item = &TaskAssignment> {
        self.tasks.values().map(|s| &s.assign)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len() + self.bound.iter().map(VecDeque::len).sum::<usize>()
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn events(&self) -> &[RunEvent] {
        &self.events
    }

    /// Final task records, in task order.
    pub fn task_records(&self) -> Vec<TaskRecord> {
        self.tasks
            .values()
            .map(|s| {
                s.record.clone().unwrap_or_else(|| {
                    let mut r = TaskRecord::new(s.spec.task_id);
                    r.attempts = s.assign.attempt;
                    r
                })
            })
            .collect()
    }

    pub fn stored(&self) -> impl Iterator<Item = &StoredRecord> {
        self.stored.values()
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn stale_heartbeats(&self) -> u64 {
        self.stale_heartbeats
    }

    pub fn egress_bytes(&self) -> u64 {
        self.egress_bytes
    }

    /// Total and largest framed size of the grants issued.
    pub fn grant_bytes(&self) -> (u64, usize) {
        (self.grant_bytes, self.max_grant_bytes)
    }

    pub fn grants(&self) -> u64 {
        self.grants
    }
}

/// Checks that no task was ever held by two workers at once.
pub fn verify_single_ownership(log: &[LogEntry]) -> Result<(), String> {
    let mut holder: HashMap<TaskId, WorkerId> = HashMap::new();
    for e in log {
        match e.kind {
            LogKind::Granted => {
                let w = e.worker.expect("grants name a worker");
                if let Some(prev) = holder.insert(e.task_id, w) {
                    return Err(format!(
                        "task {} granted to {w} at {} us while held by {prev}",
                        e.task_id, e.at_us
                    ));
                }
            }
            LogKind::Released | LogKind::Finished | LogKind::Lost => {
                holder.remove(&e.task_id);
            }
        }
    }
    Ok(())
}
