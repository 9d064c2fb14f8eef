//! The supervisor as an independent execution context.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError};
use log::{debug, warn};

use super::monitor::{Respawner, Supervisor};
use super::policy::SupervisorPolicy;
use super::status::Heartbeat;
use super::unit::ExecutionUnit;
use crate::clock::RunClock;
use crate::model::WorkerId;

struct Shared {
    sup: Mutex<Supervisor>,
    stop: AtomicBool,
}

/// Runs a [`Supervisor`] on its own thread: ingests heartbeats as they
/// arrive, polls liveness every poll interval, and kills and respawns hung
/// or crashed units. It shares no state with the workers beyond the
/// heartbeat channel and the units' kill handles.
pub struct SupervisorRuntime {
    shared: Arc<Shared>,
    clock: RunClock,
    thread: Option<JoinHandle<Box<dyn Respawner>>>,
}

impl SupervisorRuntime {
    pub fn start(
        policy: SupervisorPolicy,
        clock: RunClock,
        heartbeats: Receiver<Heartbeat>,
        respawner: Box<dyn Respawner>,
    ) -> std::io::Result<Self> {
        let shared = Arc::new(Shared {
            sup: Mutex::new(Supervisor::new(policy.clone())),
            stop: AtomicBool::new(false),
        });
        let s = shared.clone();
        let thread = std::thread::Builder::new()
            .name("supervisor".into())
            .spawn(move || run(s, policy, clock, heartbeats, respawner))?;
        Ok(SupervisorRuntime {
            shared,
            clock,
            thread: Some(thread),
        })
    }

    pub fn register(&self, worker: WorkerId, unit: Box<dyn ExecutionUnit>) {
        let now = self.clock.now_us();
        self.shared.sup.lock().unwrap().register(worker, Some(unit), now);
    }

    pub fn with<R>(&self, f: impl FnOnce(&mut Supervisor) -> R) -> R {
        f(&mut self.shared.sup.lock().unwrap())
    }

    /// Stops the loop and returns the final supervisor state and respawner.
    pub fn stop(mut self) -> (Supervisor, Option<Box<dyn Respawner>>) {
        self.shared.stop.store(true, Ordering::Release);
        let respawner = self.thread.take().and_then(|t| t.join().ok());
        let shared = self.shared.clone();
        drop(self);
        let sup = match Arc::try_unwrap(shared) {
            Ok(s) => s.sup.into_inner().unwrap(),
            Err(s) => std::mem::replace(
                &mut *s.sup.lock().unwrap(),
                Supervisor::new(SupervisorPolicy::default()),
            ),
        };
        (sup, respawner)
    }
}

impl Drop for SupervisorRuntime {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn run(
    shared: Arc<Shared>,
    policy: SupervisorPolicy,
    clock: RunClock,
    heartbeats: Receiver<Heartbeat>,
    mut respawner: Box<dyn Respawner>,
) -> Box<dyn Respawner> {
    let poll = Duration::from_micros(policy.poll_us());
    let mut next_poll = clock.now_us() + policy.poll_us();
    while !shared.stop.load(Ordering::Acquire) {
        let now = clock.now_us();
        // Wake at the next poll tick, or earlier when a heartbeat expires.
        let due = shared
            .sup
            .lock()
            .unwrap()
            .next_expiry_us()
            .map_or(next_poll, |e| e.min(next_poll));
        if now < due {
            let wait = Duration::from_micros(due - now).min(poll);
            match heartbeats.recv_timeout(wait) {
                Ok(hb) => {
                    let now = clock.now_us();
                    shared.sup.lock().unwrap().ingest(&hb, now);
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => std::thread::sleep(wait),
            }
            continue;
        }
        next_poll = now + policy.poll_us();
        let mut sup = shared.sup.lock().unwrap();
        let crashed = sup.poll_crashed();
        while let Ok(hb) = heartbeats.try_recv() {
            sup.ingest(&hb, clock.now_us());
        }
        let now = clock.now_us();
        for w in crashed {
            if sup.state(w) == Some(super::UnitState::Running) {
                sup.note_crash(w, now);
                recover(&mut sup, &mut *respawner, w, now);
            }
        }
        for w in sup.poll_liveness(now) {
            sup.note_hang(w, now);
            recover(&mut sup, &mut *respawner, w, now);
        }
    }
    respawner
}

fn recover(sup: &mut Supervisor, respawner: &mut dyn Respawner, w: WorkerId, now: crate::Micros) {
    match sup.kill_and_respawn(w, respawner, now) {
        Ok(outcome) => debug!("worker {w}: {outcome:?}"),
        Err(e) => warn!("{e}"),
    }
}

#[cfg(test)]
mod tests {
    use super::super::status::{Phase, StatusMonitor};
    use super::super::unit::ThreadUnit;
    use super::*;
    use crossbeam_channel::{unbounded, Sender};
    use std::sync::atomic::AtomicU32;

    /// Worker that heartbeats for `beats` intervals, then blocks silently
    /// (incarnation 0 only), then finishes.
    fn spawn_worker(tx: Sender<Heartbeat>, clock: RunClock, id: WorkerId, inc: u32, hang: bool) -> ThreadUnit {
        ThreadUnit::spawn(format!("w{id}"), move |ctl| {
            let mut m = StatusMonitor::new(id, inc, Some(tx), clock, 10_000);
            for _ in 0..5 {
                m.tick(Phase::Idle);
                m.sync_heartbeat();
                if ctl.sleep(Duration::from_millis(10)) {
                    return;
                }
            }
            if hang {
                ctl.wait_killed();
                return;
            }
            m.record_progress(Phase::Done, m.record().progress_counter + 1);
            m.sync_heartbeat();
        })
        .unwrap()
    }

    struct Again {
        tx: Sender<Heartbeat>,
        clock: RunClock,
        spawned: Arc<AtomicU32>,
    }
    impl Respawner for Again {
        fn respawn(&mut self, w: WorkerId, inc: u32) -> std::io::Result<Box<dyn ExecutionUnit>> {
            self.spawned.fetch_add(1, Ordering::SeqCst);
            Ok(Box::new(spawn_worker(self.tx.clone(), self.clock, w, inc, false)))
        }
        fn abandon(&mut self, _: WorkerId) {}
    }

    #[test]
    fn hung_worker_is_killed_and_respawned() {
        let clock = RunClock::start();
        let (tx, rx) = unbounded();
        let spawned = Arc::new(AtomicU32::new(0));
        let policy = SupervisorPolicy::fast(10, 60);
        let rt = SupervisorRuntime::start(
            policy,
            clock,
            rx,
            Box::new(Again {
                tx: tx.clone(),
                clock,
                spawned: spawned.clone(),
            }),
        )
        .unwrap();
        rt.register(0, Box::new(spawn_worker(tx.clone(), clock, 0, 0, true)));
        rt.register(1, Box::new(spawn_worker(tx.clone(), clock, 1, 0, false)));
        let deadline = std::time::Instant::now() + Duration::from_secs(10);
        while rt.with(|s| s.running()) > 0 && std::time::Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(5));
        }
        let (sup, _) = rt.stop();
        assert_eq!(spawned.load(Ordering::SeqCst), 1);
        let hangs: Vec<_> = sup.events().iter().filter(|e| e.name() == "hang_detected").collect();
        assert_eq!(hangs.len(), 1);
        assert_eq!(hangs[0].worker(), 0);
        assert_eq!(sup.incarnation(0), Some(1));
        assert_eq!(sup.respawns(1), 0);
    }

    #[test]
    fn crash_is_detected_without_waiting_for_timeout() {
        let clock = RunClock::start();
        let (tx, rx) = unbounded();
        let spawned = Arc::new(AtomicU32::new(0));
        let rt = SupervisorRuntime::start(
            SupervisorPolicy::fast(10, 10_000),
            clock,
            rx,
            Box::new(Again {
                tx: tx.clone(),
                clock,
                spawned: spawned.clone(),
            }),
        )
        .unwrap();
        rt.register(0, Box::new(ThreadUnit::spawn("crash".into(), |_| {}).unwrap()));
        let deadline = std::time::Instant::now() + Duration::from_secs(5);
        while rt.with(|s| s.running()) > 0 && std::time::Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(5));
        }
        let (sup, _) = rt.stop();
        assert!(clock.now_us() < 5_000_000);
        assert_eq!(spawned.load(Ordering::SeqCst), 1);
        assert!(sup.events().iter().any(|e| e.name() == "crash_detected"));
    }
}
