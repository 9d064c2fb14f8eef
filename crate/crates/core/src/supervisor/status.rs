//! Worker-side status monitors and the heartbeats they ship.

use crossbeam_channel::Sender;
use serde::{Deserialize, Serialize};

use crate::clock::RunClock;
use crate::model::{StageKind, WorkerId};
use crate::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Stage(StageKind),
    /// The unit finished its work and is exiting normally.
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusRecord {
    pub worker_id: WorkerId,
    pub phase: Phase,
    pub progress_counter: u64,
    pub updated_at_us: Micros,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heartbeat {
    pub incarnation: u32,
    pub record: StatusRecord,
}

/// A worker's local status record. Updates are monotone: counter
/// regressions and backward timestamps are rejected.
#[derive(Debug)]
pub struct StatusMonitor {
    record: StatusRecord,
    incarnation: u32,
    tx: Option<Sender<Heartbeat>>,
    clock: RunClock,
    interval_us: Micros,
    last_sync_us: Option<Micros>,
}

impl StatusMonitor {
    pub fn new(
        worker_id: WorkerId,
        incarnation: u32,
        tx: Option<Sender<Heartbeat>>,
        clock: RunClock,
        interval_us: Micros,
    ) -> Self {
        StatusMonitor {
            record: StatusRecord {
                worker_id,
                phase: Phase::Idle,
                progress_counter: 0,
                updated_at_us: clock.now_us(),
            },
            incarnation,
            tx,
            clock,
            interval_us,
            last_sync_us: None,
        }
    }

    pub fn record(&self) -> &StatusRecord {
        &self.record
    }

    pub fn incarnation(&self) -> u32 {
        self.incarnation
    }

    pub fn clock(&self) -> RunClock {
        self.clock
    }

    /// Sets phase and counter. Returns false, leaving the record unchanged,
    /// if `counter` is below the current one.
    pub fn record_progress(&mut self, phase: Phase, counter: u64) -> bool {
        if counter < self.record.progress_counter {
            return false;
        }
        let now = self.clock.now_us().max(self.record.updated_at_us);
        self.record.phase = phase;
        self.record.progress_counter = counter;
        self.record.updated_at_us = now;
        true
    }

    /// Increments the counter.
    pub fn tick(&mut self, phase: Phase) {
        let next = self.record.progress_counter + 1;
        self.record_progress(phase, next);
    }

    /// Ships a copy of the record now.
    pub fn sync_heartbeat(&mut self) {
        self.last_sync_us = Some(self.clock.now_us());
        if let Some(tx) = &self.tx {
            let _ = tx.send(Heartbeat {
                incarnation: self.incarnation,
                record: self.record.clone(),
            });
        }
    }

    /// Ships a copy if a heartbeat interval has passed since the last one.
    pub fn maybe_sync(&mut self) {
        let now = self.clock.now_us();
        match self.last_sync_us {
            Some(t) if now < t + self.interval_us => {}
            _ => self.sync_heartbeat(),
        }
    }

    pub fn interval_us(&self) -> Micros {
        self.interval_us
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counter_regression_rejected() {
        let mut m = StatusMonitor::new(3, 0, None, RunClock::start(), 1000);
        assert!(m.record_progress(Phase::Stage(StageKind::Plan), 5));
        let before = m.record().clone();
        assert!(!m.record_progress(Phase::Idle, 4));
        assert_eq!(m.record(), &before);
        m.tick(Phase::Idle);
        assert_eq!(m.record().progress_counter, 6);
    }

    #[test]
    fn sync_ships_copies() {
        let (tx, rx) = crossbeam_channel::unbounded();
        let mut m = StatusMonitor::new(1, 2, Some(tx), RunClock::start(), 1_000_000);
        m.tick(Phase::Idle);
        m.maybe_sync();
        m.maybe_sync();
        let hb = rx.try_recv().unwrap();
        assert_eq!((hb.incarnation, hb.record.progress_counter), (2, 1));
        assert!(rx.try_recv().is_err());
    }
}
