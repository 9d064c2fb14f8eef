//! Externally terminable execution units.

use std::process::Child;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

pub trait ExecutionUnit: Send {
    /// Terminates the unit without its cooperation. After this returns the
    /// unit produces no further effects that are accepted anywhere.
    fn kill(&mut self);

    /// True once the unit has stopped running, for whatever reason.
    fn has_exited(&mut self) -> bool;
}

/// Kill switch shared between an in-process unit and its supervisor.
///
/// An in-process unit cannot be preempted, so termination is a fence: once
/// killed, every side effect checked against the control (queue pushes,
/// store submissions, heartbeats) is refused, and any wait the unit is
/// blocked in is woken up so the thread can unwind.
#[derive(Debug, Default)]
pub struct UnitControl {
    killed: AtomicBool,
    lock: Mutex<()>,
    cv: Condvar,
}

impl UnitControl {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn kill(&self) {
        self.killed.store(true, Ordering::Release);
        let _g = self.lock.lock().unwrap();
        self.cv.notify_all();
    }

    pub fn is_killed(&self) -> bool {
        self.killed.load(Ordering::Acquire)
    }

    /// Sleeps up to `dur`; returns true early if killed meanwhile.
    pub fn sleep(&self, dur: Duration) -> bool {
        let deadline = Instant::now() + dur;
        let mut g = self.lock.lock().unwrap();
        loop {
            if self.is_killed() {
                return true;
            }
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            g = self.cv.wait_timeout(g, deadline - now).unwrap().0;
        }
    }

    /// Blocks until killed.
    pub fn wait_killed(&self) {
        let mut g = self.lock.lock().unwrap();
        while !self.is_killed() {
            g = self.cv.wait(g).unwrap();
        }
    }
}

/// A worker thread fenced by a [`UnitControl`]. Killing detaches the thread.
#[derive(Debug)]
pub struct ThreadUnit {
    control: Arc<UnitControl>,
    handle: Option<JoinHandle<()>>,
}

impl ThreadUnit {
    pub fn new(control: Arc<UnitControl>, handle: JoinHandle<()>) -> Self {
        ThreadUnit {
            control,
            handle: Some(handle),
        }
    }

    pub fn spawn<F>(name: String, f: F) -> std::io::Result<Self>
    where
        F: FnOnce(Arc<UnitControl>) + Send + 'static,
    {
        let control = UnitControl::new();
        let c = control.clone();
        let handle = std::thread::Builder::new().name(name).spawn(move || f(c))?;
        Ok(ThreadUnit::new(control, handle))
    }

    pub fn control(&self) -> &Arc<UnitControl> {
        &self.control
    }

    /// Waits for a unit that was not killed.
    pub fn join(mut self) -> std::thread::Result<()> {
        match self.handle.take() {
            Some(h) => h.join(),
            None => Ok(()),
        }
    }
}

impl ExecutionUnit for ThreadUnit {
    fn kill(&mut self) {
        self.control.kill();
        self.handle.take();
    }

    fn has_exited(&mut self) -> bool {
        self.handle.as_ref().is_none_or(|h| h.is_finished())
    }
}

/// A child process; kill sends SIGKILL.
#[derive(Debug)]
pub struct ProcessUnit {
    child: Child,
    exited: bool,
}

impl ProcessUnit {
    pub fn new(child: Child) -> Self {
        ProcessUnit { child, exited: false }
    }

    pub fn id(&self) -> u32 {
        self.child.id()
    }

    pub fn child_mut(&mut self) -> &mut Child {
        &mut self.child
    }
}

impl ExecutionUnit for ProcessUnit {
    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
        self.exited = true;
    }

    fn has_exited(&mut self) -> bool {
        if !self.exited {
            self.exited = !matches!(self.child.try_wait(), Ok(None));
        }
        self.exited
    }
}

impl Drop for ProcessUnit {
    fn drop(&mut self) {
        if !self.has_exited() {
            self.kill();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kill_wakes_a_blocked_thread() {
        let mut u = ThreadUnit::spawn("t".into(), |c| c.wait_killed()).unwrap();
        std::thread::sleep(Duration::from_millis(20));
        assert!(!u.has_exited());
        let c = u.control().clone();
        u.kill();
        assert!(c.is_killed());
        assert!(u.has_exited());
        assert!(c.sleep(Duration::from_secs(5)));
    }

    #[cfg(unix)]
    #[test]
    fn process_kill_is_forced() {
        let child = std::process::Command::new("sleep").arg("30").spawn().unwrap();
        let mut u = ProcessUnit::new(child);
        assert!(!u.has_exited());
        let t = Instant::now();
        u.kill();
        assert!(u.has_exited());
        assert!(t.elapsed() < Duration::from_secs(5));
    }
}
