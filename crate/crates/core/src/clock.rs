//! Monotonic run clock shared by every context of a run.

use std::time::{Duration, Instant};

use crate::Micros;

#[derive(Debug, Clone, Copy)]
pub struct RunClock {
    epoch: Instant,
}

impl Default for RunClock {
    fn default() -> Self {
        Self::start()
    }
}

impl RunClock {
    pub fn start() -> Self {
        RunClock { epoch: Instant::now() }
    }

    pub fn now_us(&self) -> Micros {
        self.epoch.elapsed().as_micros() as Micros
    }

    pub fn at(&self, us: Micros) -> Instant {
        self.epoch + Duration::from_micros(us)
    }
}
