//! Bounded multi-producer multi-consumer queue with counted-poison
//! termination.
//!
//! Each producer enqueues one `Poison` when its stream is exhausted. The
//! queue is drained once every registered producer's poison has been
//! consumed, no context is waiting and no dequeued context is still in
//! service; at that point every blocked consumer returns [`Popped::Drained`].
//! A context whose consumer died can be returned with
//! [`BoundedQueue::requeue`] as long as it is still in service, so drain can
//! never strand it.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use crate::model::WorkerId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueueMessage<T> {
    Context(T),
    Poison(WorkerId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Popped<T> {
    Context(T),
    Poison(WorkerId),
    Drained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueueStats {
    pub capacity: usize,
    pub depth: usize,
    pub max_depth: usize,
    pub enqueued: u64,
    pub dequeued: u64,
    pub requeued: u64,
    pub poisons_enqueued: u64,
    pub poisons_seen: u64,
    pub producers: u64,
    pub in_service: u64,
}

#[derive(Debug)]
struct Inner<T> {
    items: VecDeque<QueueMessage<T>>,
    stats: QueueStats,
}

impl<T> Inner<T> {
    fn drained(&self) -> bool {
        self.items.is_empty() && self.stats.in_service == 0 && self.stats.poisons_seen >= self.stats.producers
    }
}

/// Outcome of a blocking operation that gave up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaitAborted {
    /// The caller's abort check returned true.
    Aborted,
}

#[derive(Debug)]
pub struct BoundedQueue<T> {
    inner: Mutex<Inner<T>>,
    not_full: Condvar,
    not_empty: Condvar,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "queue capacity must be >= 1");
        BoundedQueue {
            inner: Mutex::new(Inner {
                items: VecDeque::with_capacity(capacity),
                stats: QueueStats {
                    capacity,
                    ..QueueStats::default()
                },
            }),
            not_full: Condvar::new(),
            not_empty: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner<T>> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Registers `n` more producers that will each enqueue one poison.
    pub fn register_producers(&self, n: u64) {
        self.lock().stats.producers += n;
    }

    pub fn stats(&self) -> QueueStats {
        self.lock().stats
    }

    pub fn depth(&self) -> usize {
        self.lock().items.len()
    }

    /// Contexts waiting plus contexts in service.
    pub fn backlog(&self) -> (u64, u64) {
        let g = self.lock();
        let queued = g.items.iter().filter(|m| matches!(m, QueueMessage::Context(_))).count() as u64;
        (queued, g.stats.in_service)
    }

    pub fn is_drained(&self) -> bool {
        self.lock().drained()
    }

    fn enqueue(g: &mut Inner<T>, msg: QueueMessage<T>) {
        match &msg {
            QueueMessage::Context(_) => g.stats.enqueued += 1,
            QueueMessage::Poison(_) => g.stats.poisons_enqueued += 1,
        }
        g.items.push_back(msg);
        g.stats.depth = g.items.len();
        g.stats.max_depth = g.stats.max_depth.max(g.items.len());
    }

    /// Blocks while the queue is full.
    pub fn push(&self, msg: QueueMessage<T>) {
        let _ = self.push_with(msg, Duration::from_secs(3600), || false);
    }

    /// Blocks while the queue is full, waking every `tick` to call `abort`;
    /// gives up (dropping `msg`) when it returns true.
    pub fn push_with(
        &self,
        msg: QueueMessage<T>,
        tick: Duration,
        mut abort: impl FnMut() -> bool,
    ) -> Result<(), WaitAborted> {
        let mut g = self.lock();
        while g.items.len() >= g.stats.capacity {
            if abort() {
                return Err(WaitAborted::Aborted);
            }
            g = self.not_full.wait_timeout(g, tick).unwrap_or_else(|e| e.into_inner()).0;
        }
        Self::enqueue(&mut g, msg);
        drop(g);
        self.not_empty.notify_one();
        Ok(())
    }

    /// Non-blocking push; hands the message back when full.
    pub fn try_push(&self, msg: QueueMessage<T>) -> Result<(), QueueMessage<T>> {
        let mut g = self.lock();
        if g.items.len() >= g.stats.capacity {
            return Err(msg);
        }
        Self::enqueue(&mut g, msg);
        drop(g);
        self.not_empty.notify_one();
        Ok(())
    }

    /// Enqueues ignoring capacity, for messages owed by a producer that died.
    pub fn push_force(&self, msg: QueueMessage<T>) {
        let mut g = self.lock();
        Self::enqueue(&mut g, msg);
        drop(g);
        self.not_empty.notify_all();
    }

    /// Returns an in-service context to the tail of the queue, ignoring
    /// capacity, and releases its service slot.
    pub fn requeue(&self, ctx: T) {
        let mut g = self.lock();
        g.stats.in_service = g.stats.in_service.saturating_sub(1);
        g.stats.requeued += 1;
        g.items.push_back(QueueMessage::Context(ctx));
        g.stats.depth = g.items.len();
        g.stats.max_depth = g.stats.max_depth.max(g.items.len());
        drop(g);
        self.not_empty.notify_all();
    }

    /// Releases the service slot of a dequeued context.
    pub fn done(&self) {
        let mut g = self.lock();
        g.stats.in_service = g.stats.in_service.saturating_sub(1);
        let drained = g.drained();
        drop(g);
        if drained {
            self.not_empty.notify_all();
        }
    }

    /// Blocks until a message arrives or the queue drains.
    pub fn pop(&self) -> Popped<T> {
        loop {
            if let Ok(p) = self.pop_with(Duration::from_secs(3600), || false) {
                return p;
            }
        }
    }

    /// Like [`pop`](Self::pop), waking every `tick` to call `abort`.
    /// A returned context is in service until [`done`](Self::done) or
    /// [`requeue`](Self::requeue).
    pub fn pop_with(&self, tick: Duration, mut abort: impl FnMut() -> bool) -> Result<Popped<T>, WaitAborted> {
        let mut g = self.lock();
        loop {
            if let Some(msg) = g.items.pop_front() {
                g.stats.depth = g.items.len();
                let out = match msg {
                    QueueMessage::Context(c) => {
                        g.stats.dequeued += 1;
                        g.stats.in_service += 1;
                        Popped::Context(c)
                    }
                    QueueMessage::Poison(id) => {
                        g.stats.poisons_seen += 1;
                        Popped::Poison(id)
                    }
                };
                let drained = g.drained();
                drop(g);
                self.not_full.notify_one();
                if drained {
                    self.not_empty.notify_all();
                }
                return Ok(out);
            }
            if g.drained() {
                return Ok(Popped::Drained);
            }
            if abort() {
                return Err(WaitAborted::Aborted);
            }
            g = self
                .not_empty
                .wait_timeout(g, tick)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Pops with a deadline; `None` on timeout.
    pub fn pop_timeout(&self, timeout: Duration) -> Option<Popped<T>> {
        let deadline = Instant::now() + timeout;
        self.pop_with(Duration::from_millis(1).min(timeout), || Instant::now() >= deadline)
            .ok()
    }
}
