//! Planner-exit-driven renderer provisioning.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::metrics::{ReallocDecision, RunEvent};
use crate::model::WorkerId;
use crate::{us_to_ms, Micros};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedulerError {
    #[error("worker {0} is not a live planner")]
    UnknownWorker(WorkerId),
}

/// Unrendered work visible to the scheduler when a planner exits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Backlog {
    /// Contexts waiting in the queue.
    pub queued: u64,
    /// Contexts currently being rendered.
    pub in_render: u64,
}

impl Backlog {
    pub fn total(&self) -> u64 {
        self.queued + self.in_render
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// Provision renderer `renderer` on the reclaimed slot.
    SpawnRenderer {
        renderer: WorkerId,
    },
    Release,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReallocEntry {
    pub at_us: Micros,
    pub planner: WorkerId,
    pub decision: Decision,
    pub backlog: Backlog,
}

impl ReallocEntry {
    pub fn to_event(&self) -> RunEvent {
        let (decision, renderer) = match self.decision {
            Decision::SpawnRenderer { renderer } => (ReallocDecision::SpawnRenderer, Some(renderer)),
            Decision::Release => (ReallocDecision::Release, None),
        };
        RunEvent::Realloc {
            at_ms: us_to_ms(self.at_us),
            planner: self.planner,
            decision,
            renderer,
            backlog: self.backlog.queued,
            in_render: self.backlog.in_render,
        }
    }
}

/// The scheduler's view of one node. Decisions are made one at a time by
/// whoever owns the state.
#[derive(Debug, Clone)]
pub struct SchedulerState {
    pub live_planners: BTreeSet<WorkerId>,
    pub live_renderers: BTreeSet<WorkerId>,
    /// Slots reclaimed from exited planners and not yet reused.
    pub reclaimable_slots: u32,
    pub released_slots: u32,
    pub total_slots: u32,
    /// Reallocation happens only when enabled; otherwise every exit releases.
    pub dynamic: bool,
    /// Spawn iff backlog exceeds `live_renderers × spawn_threshold` tasks.
    pub spawn_threshold: u64,
    next_id: WorkerId,
    pub reallocation_log: Vec<ReallocEntry>,
}

impl SchedulerState {
    /// Planners get ids `0..planners`, renderers the following ids.
    pub fn new(planners: u32, renderers: u32, dynamic: bool) -> Self {
        SchedulerState {
            live_planners: (0..planners).collect(),
            live_renderers: (planners..planners + renderers).collect(),
            reclaimable_slots: 0,
            released_slots: 0,
            total_slots: planners + renderers,
            dynamic,
            spawn_threshold: 1,
            next_id: planners + renderers,
            reallocation_log: Vec::new(),
        }
    }

    pub fn on_planner_exit(
        &mut self,
        worker: WorkerId,
        backlog: Backlog,
        now_us: Micros,
    ) -> Result<Decision, SchedulerError> {
        if !self.live_planners.remove(&worker) {
            return Err(SchedulerError::UnknownWorker(worker));
        }
        self.reclaimable_slots += 1;
        let want = backlog.total() > self.live_renderers.len() as u64 * self.spawn_threshold;
        let decision = if self.dynamic && want {
            let id = self.next_id;
            self.next_id += 1;
            self.reclaimable_slots -= 1;
            self.live_renderers.insert(id);
            Decision::SpawnRenderer { renderer: id }
        } else {
            self.reclaimable_slots -= 1;
            self.released_slots += 1;
            Decision::Release
        };
        self.reallocation_log.push(ReallocEntry {
            at_us: now_us,
            planner: worker,
            decision,
            backlog,
        });
        Ok(decision)
    }

    /// A planner removed for good without a scheduling decision (for
    /// example after exhausting its respawn budget).
    pub fn on_planner_dead(&mut self, worker: WorkerId) {
        if self.live_planners.remove(&worker) {
            self.released_slots += 1;
        }
    }

    /// A renderer released at queue drain or declared dead.
    pub fn on_renderer_exit(&mut self, worker: WorkerId) {
        if self.live_renderers.remove(&worker) {
            self.released_slots += 1;
        }
    }

    pub fn slots_in_use(&self) -> u32 {
        (self.live_planners.len() + self.live_renderers.len()) as u32 + self.reclaimable_slots
    }

    pub fn assert_slot_conservation(&self) {
        assert!(self.slots_in_use() + self.released_slots <= self.total_slots);
        assert!(self.live_planners.is_disjoint(&self.live_renderers));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_exit_with_backlog_spawns() {
        let mut s = SchedulerState::new(2, 1, true);
        let d = s
            .on_planner_exit(
                0,
                Backlog {
                    queued: 20,
                    in_render: 1,
                },
                5,
            )
            .unwrap();
        assert_eq!(d, Decision::SpawnRenderer { renderer: 3 });
        assert_eq!(s.live_planners.len(), 1);
        assert_eq!(s.live_renderers.len(), 2);
        s.assert_slot_conservation();
    }

    #[test]
    fn drained_exit_releases() {
        let mut s = SchedulerState::new(2, 1, true);
        assert_eq!(s.on_planner_exit(1, Backlog::default(), 0).unwrap(), Decision::Release);
        assert_eq!(s.released_slots, 1);
        s.assert_slot_conservation();
    }

    #[test]
    fn threshold_is_one_task_per_renderer() {
        let mut s = SchedulerState::new(2, 1, true);
        let d = s
            .on_planner_exit(
                0,
                Backlog {
                    queued: 0,
                    in_render: 1,
                },
                0,
            )
            .unwrap();
        assert_eq!(d, Decision::Release);
        let d = s
            .on_planner_exit(
                1,
                Backlog {
                    queued: 1,
                    in_render: 1,
                },
                0,
            )
            .unwrap();
        assert!(matches!(d, Decision::SpawnRenderer { .. }));
    }

    #[test]
    fn static_mode_never_spawns_and_unknown_rejected() {
        let mut s = SchedulerState::new(2, 1, false);
        assert_eq!(
            s.on_planner_exit(
                0,
                Backlog {
                    queued: 50,
                    in_render: 1
                },
                0
            )
            .unwrap(),
            Decision::Release
        );
        assert_eq!(
            s.on_planner_exit(9, Backlog::default(), 0),
            Err(SchedulerError::UnknownWorker(9))
        );
        assert_eq!(
            s.on_planner_exit(0, Backlog::default(), 0),
            Err(SchedulerError::UnknownWorker(0))
        );
    }
}
