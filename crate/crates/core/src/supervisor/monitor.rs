//! The supervisor's view of its workers.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use super::policy::SupervisorPolicy;
use super::status::{Heartbeat, Phase, StatusRecord};
use super::unit::ExecutionUnit;
use crate::model::WorkerId;
use crate::Micros;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SupervisorEvent {
    HangDetected {
        at_us: Micros,
        worker: WorkerId,
        incarnation: u32,
        /// Receive time of the last accepted heartbeat.
        last_seen_us: Micros,
    },
    CrashDetected {
        at_us: Micros,
        worker: WorkerId,
        incarnation: u32,
    },
    Killed {
        at_us: Micros,
        worker: WorkerId,
        incarnation: u32,
    },
    Respawned {
        at_us: Micros,
        worker: WorkerId,
        incarnation: u32,
    },
    BudgetExhausted {
        at_us: Micros,
        worker: WorkerId,
        respawns: u32,
    },
}

impl SupervisorEvent {
    pub fn name(&self) -> &'static str {
        match self {
            SupervisorEvent::HangDetected { .. } => "hang_detected",
            SupervisorEvent::CrashDetected { .. } => "crash_detected",
            SupervisorEvent::Killed { .. } => "killed",
            SupervisorEvent::Respawned { .. } => "respawned",
            SupervisorEvent::BudgetExhausted { .. } => "budget_exhausted",
        }
    }

    pub fn at_us(&self) -> Micros {
        match self {
            SupervisorEvent::HangDetected { at_us, .. }
            | SupervisorEvent::CrashDetected { at_us, .. }
            | SupervisorEvent::Killed { at_us, .. }
            | SupervisorEvent::Respawned { at_us, .. }
            | SupervisorEvent::BudgetExhausted { at_us, .. } => *at_us,
        }
    }

    pub fn worker(&self) -> WorkerId {
        match self {
            SupervisorEvent::HangDetected { worker, .. }
            | SupervisorEvent::CrashDetected { worker, .. }
            | SupervisorEvent::Killed { worker, .. }
            | SupervisorEvent::Respawned { worker, .. }
            | SupervisorEvent::BudgetExhausted { worker, .. } => *worker,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeartbeatVerdict {
    Accepted,
    UnknownWorker,
    /// From an incarnation that was killed.
    StaleIncarnation,
    CounterRegression,
    /// The worker is finished or permanently dead.
    NotSupervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitState {
    Running,
    Finished,
    Dead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RespawnOutcome {
    Respawned { incarnation: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SupervisorError {
    #[error("worker {0} is not supervised")]
    UnknownWorker(WorkerId),
    #[error("worker {0} is not running")]
    NotRunning(WorkerId),
    #[error("worker {worker} exhausted its respawn budget of {budget}; marked dead")]
    RespawnBudgetExhausted { worker: WorkerId, budget: u32 },
    #[error("respawning worker {worker}: {reason}")]
    SpawnFailed { worker: WorkerId, reason: String },
}

/// Creates replacement units and disposes of the work of dead ones.
pub trait Respawner: Send {
    /// Starts incarnation `incarnation` of `worker`, restoring its context.
    fn respawn(&mut self, worker: WorkerId, incarnation: u32) -> std::io::Result<Box<dyn ExecutionUnit>>;

    /// `worker` is permanently dead; its in-flight work must move elsewhere.
    fn abandon(&mut self, worker: WorkerId);
}

struct Supervised {
    unit: Option<Box<dyn ExecutionUnit>>,
    incarnation: u32,
    respawns: u32,
    view: Option<StatusRecord>,
    last_seen_us: Micros,
    state: UnitState,
}

/// Supervisor state. Staleness is judged by the supervisor's own receive
/// times, never by worker-reported timestamps.
pub struct Supervisor {
    policy: SupervisorPolicy,
    workers: BTreeMap<WorkerId, Supervised>,
    events: Vec<SupervisorEvent>,
    rejected: u64,
}

impl std::fmt::Debug for Supervisor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Supervisor")
            .field("policy", &self.policy)
            .field("workers", &self.workers.len())
            .field("events", &self.events.len())
            .finish()
    }
}

impl Supervisor {
    pub fn new(policy: SupervisorPolicy) -> Self {
        Supervisor {
            policy,
            workers: BTreeMap::new(),
            events: Vec::new(),
            rejected: 0,
        }
    }

    pub fn policy(&self) -> &SupervisorPolicy {
        &self.policy
    }

    pub fn register(&mut self, worker: WorkerId, unit: Option<Box<dyn ExecutionUnit>>, now_us: Micros) {
        self.workers.insert(
            worker,
            Supervised {
                unit,
                incarnation: 0,
                respawns: 0,
                view: None,
                last_seen_us: now_us,
                state: UnitState::Running,
            },
        );
    }

    pub fn ingest(&mut self, hb: &Heartbeat, now_us: Micros) -> HeartbeatVerdict {
        let verdict = match self.workers.get_mut(&hb.record.worker_id) {
            None => HeartbeatVerdict::UnknownWorker,
            Some(w) if w.state != UnitState::Running => HeartbeatVerdict::NotSupervised,
            Some(w) if hb.incarnation != w.incarnation => HeartbeatVerdict::StaleIncarnation,
            Some(w) => {
                let regress = w.view.as_ref().is_some_and(|v| {
                    hb.record.progress_counter < v.progress_counter || hb.record.updated_at_us < v.updated_at_us
                });
                if regress {
                    HeartbeatVerdict::CounterRegression
                } else {
                    if hb.record.phase == Phase::Done {
                        w.state = UnitState::Finished;
                    }
                    w.view = Some(hb.record.clone());
                    w.last_seen_us = w.last_seen_us.max(now_us);
                    HeartbeatVerdict::Accepted
                }
            }
        };
        if verdict != HeartbeatVerdict::Accepted {
            self.rejected += 1;
        }
        verdict
    }

    /// Running workers whose last accepted heartbeat is older than the
    /// liveness timeout.
    pub fn poll_liveness(&self, now_us: Micros) -> Vec<WorkerId> {
        let timeout = self.policy.timeout_us();
        self.workers
            .iter()
            .filter(|(_, w)| w.state == UnitState::Running && now_us.saturating_sub(w.last_seen_us) > timeout)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Earliest time at which a running worker can exceed the liveness
    /// timeout, given the heartbeats seen so far.
    pub fn next_expiry_us(&self) -> Option<Micros> {
        let timeout = self.policy.timeout_us();
        self.workers
            .values()
            .filter(|w| w.state == UnitState::Running)
            .map(|w| w.last_seen_us + timeout + 1)
            .min()
    }

    /// Running workers whose unit exited without reporting `Done`.
    pub fn poll_crashed(&mut self) -> Vec<WorkerId> {
        self.workers
            .iter_mut()
            .filter(|(_, w)| w.state == UnitState::Running)
            .filter_map(|(id, w)| {
                let exited = w.unit.as_mut().is_some_and(|u| u.has_exited());
                exited.then_some(*id)
            })
            .collect()
    }

    pub fn mark_finished(&mut self, worker: WorkerId) {
        if let Some(w) = self.workers.get_mut(&worker) {
            if w.state == UnitState::Running {
                w.state = UnitState::Finished;
            }
        }
    }

    pub fn note_hang(&mut self, worker: WorkerId, now_us: Micros) {
        if let Some(w) = self.workers.get(&worker) {
            self.events.push(SupervisorEvent::HangDetected {
                at_us: now_us,
                worker,
                incarnation: w.incarnation,
                last_seen_us: w.last_seen_us,
            });
        }
    }

    pub fn note_crash(&mut self, worker: WorkerId, now_us: Micros) {
        if let Some(w) = self.workers.get(&worker) {
            self.events.push(SupervisorEvent::CrashDetected {
                at_us: now_us,
                worker,
                incarnation: w.incarnation,
            });
        }
    }

    /// Forcibly terminates `worker` and starts a fresh incarnation, or marks
    /// it dead once the respawn budget is spent.
    pub fn kill_and_respawn(
        &mut self,
        worker: WorkerId,
        respawner: &mut dyn Respawner,
        now_us: Micros,
    ) -> Result<RespawnOutcome, SupervisorError> {
        let grace = self.policy.kill_grace_ms;
        let budget = self.policy.max_respawns;
        let w = self
            .workers
            .get_mut(&worker)
            .ok_or(SupervisorError::UnknownWorker(worker))?;
        if w.state != UnitState::Running {
            return Err(SupervisorError::NotRunning(worker));
        }
        if let Some(mut unit) = w.unit.take() {
            if grace > 0 {
                let deadline = Instant::now() + Duration::from_millis(grace);
                while !unit.has_exited() && Instant::now() < deadline {
                    std::thread::sleep(Duration::from_millis(1));
                }
            }
            unit.kill();
        }
        self.events.push(SupervisorEvent::Killed {
            at_us: now_us,
            worker,
            incarnation: w.incarnation,
        });
        if w.respawns >= budget {
            w.state = UnitState::Dead;
            self.events.push(SupervisorEvent::BudgetExhausted {
                at_us: now_us,
                worker,
                respawns: w.respawns,
            });
            respawner.abandon(worker);
            return Err(SupervisorError::RespawnBudgetExhausted { worker, budget });
        }
        w.incarnation += 1;
        w.respawns += 1;
        w.view = None;
        w.last_seen_us = now_us;
        match respawner.respawn(worker, w.incarnation) {
            Ok(unit) => {
                w.unit = Some(unit);
                self.events.push(SupervisorEvent::Respawned {
                    at_us: now_us,
                    worker,
                    incarnation: w.incarnation,
                });
                Ok(RespawnOutcome::Respawned {
                    incarnation: w.incarnation,
                })
            }
            Err(e) => {
                w.state = UnitState::Dead;
                respawner.abandon(worker);
                Err(SupervisorError::SpawnFailed {
                    worker,
                    reason: e.to_string(),
                })
            }
        }
    }

    pub fn view(&self, worker: WorkerId) -> Option<&StatusRecord> {
        self.workers.get(&worker).and_then(|w| w.view.as_ref())
    }

    pub fn incarnation(&self, worker: WorkerId) -> Option<u32> {
        self.workers.get(&worker).map(|w| w.incarnation)
    }

    pub fn state(&self, worker: WorkerId) -> Option<UnitState> {
        self.workers.get(&worker).map(|w| w.state)
    }

    pub fn staleness_us(&self, worker: WorkerId, now_us: Micros) -> Option<Micros> {
        self.workers.get(&worker).map(|w| now_us.saturating_sub(w.last_seen_us))
    }

    pub fn respawns(&self, worker: WorkerId) -> u32 {
        self.workers.get(&worker).map_or(0, |w| w.respawns)
    }

    pub fn running(&self) -> usize {
        self.workers.values().filter(|w| w.state == UnitState::Running).count()
    }

    pub fn workers(&self) -> Vec<WorkerId> {
        self.workers.keys().copied().collect()
    }

    pub fn events(&self) -> &[SupervisorEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<SupervisorEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn rejected_heartbeats(&self) -> u64 {
        self.rejected
    }

    /// Kills every unit still running, without respawning.
    pub fn shutdown(&mut self) {
        for w in self.workers.values_mut() {
            if let Some(mut u) = w.unit.take() {
                if !u.has_exited() {
                    u.kill();
                }
            }
            if w.state == UnitState::Running {
                w.state = UnitState::Finished;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StageKind;

    struct NullUnit;
    impl ExecutionUnit for NullUnit {
        fn kill(&mut self) {}
        fn has_exited(&mut self) -> bool {
            false
        }
    }

    #[derive(Default)]
    struct Spawner {
        spawned: Vec<(WorkerId, u32)>,
        abandoned: Vec<WorkerId>,
    }
    impl Respawner for Spawner {
        fn respawn(&mut self, w: WorkerId, inc: u32) -> std::io::Result<Box<dyn ExecutionUnit>> {
            self.spawned.push((w, inc));
            Ok(Box::new(NullUnit))
        }
        fn abandon(&mut self, w: WorkerId) {
            self.abandoned.push(w);
        }
    }

    fn hb(worker: WorkerId, inc: u32, counter: u64, at: Micros) -> Heartbeat {
        Heartbeat {
            incarnation: inc,
            record: StatusRecord {
                worker_id: worker,
                phase: Phase::Stage(StageKind::Render),
                progress_counter: counter,
                updated_at_us: at,
            },
        }
    }

    fn sup() -> Supervisor {
        let mut s = Supervisor::new(SupervisorPolicy::fast(100, 1000));
        for w in 0..3 {
            s.register(w, Some(Box::new(NullUnit)), 0);
        }
        s
    }

    #[test]
    fn fresh_workers_are_not_listed() {
        let mut s = sup();
        for w in 0..3 {
            s.ingest(&hb(w, 0, 1, 500), 500);
        }
        assert!(s.poll_liveness(1400).is_empty());
    }

    #[test]
    fn only_the_silent_worker_times_out() {
        let mut s = sup();
        for t in (100..=3000).step_by(100) {
            s.ingest(&hb(0, 0, t, t), t * 1000);
            s.ingest(&hb(2, 0, t, t), t * 1000);
        }
        assert_eq!(s.poll_liveness(3_000_000), vec![1]);
    }

    #[test]
    fn regression_and_stale_incarnation_rejected() {
        let mut s = sup();
        assert_eq!(s.ingest(&hb(0, 0, 5, 10), 10), HeartbeatVerdict::Accepted);
        assert_eq!(s.ingest(&hb(0, 0, 4, 20), 20), HeartbeatVerdict::CounterRegression);
        assert_eq!(s.view(0).unwrap().progress_counter, 5);
        let mut sp = Spawner::default();
        s.kill_and_respawn(0, &mut sp, 30).unwrap();
        assert_eq!(s.ingest(&hb(0, 0, 9, 40), 40), HeartbeatVerdict::StaleIncarnation);
        assert_eq!(s.ingest(&hb(0, 1, 1, 40), 40), HeartbeatVerdict::Accepted);
        assert_eq!(s.ingest(&hb(7, 0, 1, 40), 40), HeartbeatVerdict::UnknownWorker);
    }

    #[test]
    fn budget_exhaustion_marks_dead() {
        let mut s = sup();
        let mut sp = Spawner::default();
        for i in 1..=3 {
            assert_eq!(
                s.kill_and_respawn(1, &mut sp, i).unwrap(),
                RespawnOutcome::Respawned { incarnation: i as u32 }
            );
        }
        assert_eq!(
            s.kill_and_respawn(1, &mut sp, 9),
            Err(SupervisorError::RespawnBudgetExhausted { worker: 1, budget: 3 })
        );
        assert_eq!(s.state(1), Some(UnitState::Dead));
        assert_eq!(sp.abandoned, vec![1]);
        assert_eq!(sp.spawned, vec![(1, 1), (1, 2), (1, 3)]);
        assert!(s.poll_liveness(u64::MAX).iter().all(|w| *w != 1));
        let names: Vec<_> = s.events().iter().map(|e| e.name()).collect();
        assert_eq!(names.iter().filter(|n| **n == "killed").count(), 4);
        assert_eq!(names.last(), Some(&"budget_exhausted"));
    }
}
