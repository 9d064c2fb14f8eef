//! Wall-clock pacing of stage time.

use std::sync::Arc;
use std::time::Duration;

use crate::clock::RunClock;
use crate::model::{Pace, StageError, StageKind, TaskId, WorkerRole};
use crate::supervisor::{Phase, StatusMonitor, UnitControl};
use crate::workloads::{FaultKind, FaultPlan};
use crate::Micros;

const DEFAULT_CHUNK_US: Micros = 10_000;

/// Sleeps (or spins) through stage time in chunks no longer than the
/// heartbeat interval, reporting progress after every chunk. Stops with
/// [`StageError::Interrupted`] as soon as the unit is killed.
pub struct RealPace {
    ctl: Arc<UnitControl>,
    clock: RunClock,
    monitor: Option<StatusMonitor>,
    faults: Option<(Arc<FaultPlan>, WorkerRole, u32)>,
    slowdown: f64,
    crashed: bool,
    last_us: Micros,
}

impl RealPace {
    pub fn new(ctl: Arc<UnitControl>, clock: RunClock) -> Self {
        RealPace {
            ctl,
            clock,
            monitor: None,
            faults: None,
            slowdown: 1.0,
            crashed: false,
            last_us: 0,
        }
    }

    pub fn with_monitor(mut self, monitor: StatusMonitor) -> Self {
        self.monitor = Some(monitor);
        self
    }

    pub fn with_faults(mut self, plan: Arc<FaultPlan>, role: WorkerRole, index: u32) -> Self {
        self.faults = Some((plan, role, index));
        self
    }

    pub fn control(&self) -> &Arc<UnitControl> {
        &self.ctl
    }

    pub fn clock(&self) -> RunClock {
        self.clock
    }

    pub fn is_killed(&self) -> bool {
        self.ctl.is_killed()
    }

    /// An injected crash fired; the unit must exit without cleanup.
    pub fn crashed(&self) -> bool {
        self.crashed
    }

    pub fn slowdown(&self) -> f64 {
        self.slowdown
    }

    /// Stage time requested by the most recent `spend`, before slowdown.
    pub fn last_requested_us(&self) -> Micros {
        self.last_us
    }

    /// Counts progress and ships a heartbeat when one is due.
    pub fn heartbeat(&mut self, phase: Phase) {
        if self.ctl.is_killed() {
            return;
        }
        if let Some(m) = &mut self.monitor {
            m.tick(phase);
            m.maybe_sync();
        }
    }

    /// Reports normal termination to the supervisor.
    pub fn finish(&mut self) {
        if let Some(m) = &mut self.monitor {
            let next = m.record().progress_counter + 1;
            m.record_progress(Phase::Done, next);
            m.sync_heartbeat();
        }
    }

    /// Polls the fault plan. `task` is set only at task start.
    pub fn poll_faults(&mut self, task: Option<TaskId>) -> Result<(), StageError> {
        let Some((plan, role, index)) = &self.faults else {
            return Ok(());
        };
        if plan.is_empty() {
            return Ok(());
        }
        for kind in plan.poll(*role, *index, task, self.clock.now_us()) {
            match kind {
                FaultKind::Slow { factor } => self.slowdown *= factor,
                FaultKind::Crash => {
                    self.crashed = true;
                    return Err(StageError::Interrupted);
                }
                FaultKind::Hang => return self.hang(),
            }
        }
        Ok(())
    }

    /// Stops reporting and blocks until killed.
    pub fn hang(&mut self) -> Result<(), StageError> {
        self.ctl.wait_killed();
        Err(StageError::Interrupted)
    }

    fn chunk_us(&self) -> Micros {
        self.monitor
            .as_ref()
            .map_or(DEFAULT_CHUNK_US, |m| m.interval_us().max(1))
    }

    /// Waits `dur_us` of wall time while heartbeating in `phase`.
    pub fn wait(&mut self, phase: Phase, dur_us: Micros, spin: bool) -> Result<Micros, StageError> {
        let start = self.clock.now_us();
        let deadline = start + dur_us;
        let chunk = self.chunk_us();
        loop {
            let now = self.clock.now_us();
            if now >= deadline {
                return Ok(now - start);
            }
            let step = chunk.min(deadline - now);
            if spin {
                let until = now + step;
                while self.clock.now_us() < until {
                    if self.ctl.is_killed() {
                        return Err(StageError::Interrupted);
                    }
                    std::hint::spin_loop();
                }
            } else if self.ctl.sleep(Duration::from_micros(step)) {
                return Err(StageError::Interrupted);
            }
            if self.ctl.is_killed() {
                return Err(StageError::Interrupted);
            }
            self.heartbeat(phase);
            if self.faults.is_some() {
                self.poll_faults(None)?;
            }
        }
    }
}

impl Pace for RealPace {
    fn spend(&mut self, stage: StageKind, dur_us: Micros, cpu_spin: bool) -> Result<Micros, StageError> {
        self.last_us = dur_us;
        if dur_us == 0 {
            return Ok(0);
        }
        let scaled = (dur_us as f64 * self.slowdown).round() as Micros;
        self.wait(Phase::Stage(stage), scaled, cpu_spin)
    }
}
