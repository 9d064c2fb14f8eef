//! Drives a [`Master`] with simulated workers in virtual time.
//!
//! Workers pull one task at a time, heartbeat every interval and may be
//! killed at a given time, after which they fall silent. Message delivery
//! takes `latency_us` each way.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::master::{Dispatch, LogEntry, Master, Reply, WorkerDescriptor};
use super::protocol::{Completion, Registration};
use crate::metrics::{Outcome, TaskRecord};
use crate::model::{ClusterTimeouts, TaskDraws, TaskSpec, ValidatedConfig, WorkerId, WorkerRole};
use crate::workloads::TaskPool;
use crate::Micros;

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualTask {
    pub spec: TaskSpec,
    pub work_us: Micros,
    pub outcome: Outcome,
}

/// Tasks of a pool; every one completes.
pub fn pool_tasks(pool: &TaskPool) -> Vec<VirtualTask> {
    pool.tasks
        .iter()
        .map(|t| VirtualTask {
            spec: TaskSpec::new(t.task_id, t.scene_ref.clone(), t.task_id),
            work_us: t.work_us,
            outcome: Outcome::Completed,
        })
        .collect()
}

/// Tasks of `cfg`, each run whole on one worker with its drawn stage times.
pub fn config_tasks(cfg: &ValidatedConfig) -> Vec<VirtualTask> {
    cfg.tasks()
        .into_iter()
        .map(|spec| {
            let d = TaskDraws::draw(&spec, cfg);
            let (work_us, outcome) = if d.load_failed {
                (d.load_us, Outcome::Lost)
            } else if !d.valid {
                (d.load_us + d.randomize_us + d.plan_us, Outcome::Pruned)
            } else if d.store_failed {
                (
                    d.load_us + d.randomize_us + d.plan_us + d.render_us + d.store_us,
                    Outcome::Lost,
                )
            } else {
                (
                    d.load_us + d.randomize_us + d.plan_us + d.render_us + d.store_us,
                    Outcome::Completed,
                )
            };
            VirtualTask { spec, work_us, outcome }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct VirtualCluster {
    pub workers: u32,
    /// Speed factor per worker; missing entries are 1.
    pub speeds: Vec<f64>,
    pub dynload: bool,
    pub timeouts: ClusterTimeouts,
    /// `(worker index, time)`: the worker stops at that time.
    pub kills: Vec<(u32, Micros)>,
    pub latency_us: Micros,
    pub retry_after_ms: u64,
}

impl VirtualCluster {
    pub fn new(workers: u32, dynload: bool) -> Self {
        VirtualCluster {
            workers,
            speeds: Vec::new(),
            dynload,
            timeouts: ClusterTimeouts::default(),
            kills: Vec::new(),
            latency_us: 0,
            retry_after_ms: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VirtualReport {
    pub makespan_us: Micros,
    pub completed: u64,
    pub pruned: u64,
    pub lost: u64,
    pub requeued: u64,
    pub workers: Vec<WorkerDescriptor>,
    pub tasks: Vec<TaskRecord>,
    pub log: Vec<LogEntry>,
    pub egress_bytes: u64,
    pub max_grant_bytes: usize,
    /// Every task resolved.
    pub finished: bool,
}

impl VirtualReport {
    /// Busiest worker's completed-task wall time over the mean, among
    /// workers that were never killed.
    pub fn busy_spread(&self, survivors: impl Fn(WorkerId) -> bool) -> f64 {
        let busy: Vec<f64> = self
            .workers
            .iter()
            .filter(|w| survivors(w.worker_id))
            .map(|w| w.busy_ms)
            .collect();
        if busy.is_empty() {
            return 1.0;
        }
        let mean = busy.iter().sum::<f64>() / busy.len() as f64;
        let max = busy.iter().cloned().fold(0.0, f64::max);
        if mean > 0.0 {
            max / mean
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Kill(usize),
    Done(usize, u64, u32),
    Heartbeat(usize),
    Request(usize),
    Poll,
}

pub fn run_virtual(tasks: &[VirtualTask], c: &VirtualCluster) -> VirtualReport {
    let dispatch = if c.dynload {
        Dispatch::LeastLoaded
    } else {
        Dispatch::RoundRobin { workers: c.workers }
    };
    let specs = tasks.iter().map(|t| t.spec.clone()).collect();
    let mut m = Master::new(specs, c.timeouts.clone(), dispatch).with_retry_after(c.retry_after_ms);
    let by_id: std::collections::HashMap<u64, &VirtualTask> = tasks.iter().map(|t| (t.spec.task_id, t)).collect();
    let n = c.workers as usize;
    let ids: Vec<WorkerId> = (0..n)
        .map(|i| {
            let reg = Registration::new(format!("vnode-{i}"), WorkerRole::Fused, 0, 1);
            m.register(&reg, 0).expect("fresh registrations succeed")
        })
        .collect();
    let mut dead = vec![false; n];
    let mut stopped = vec![false; n];
    let mut seq = vec![0u64; n];
    let mut heap: BinaryHeap<Reverse<(Micros, u64, Ev)>> = BinaryHeap::new();
    let mut order = 0u64;
    let mut push = |heap: &mut BinaryHeap<_>, at: Micros, ev: Ev| {
        order += 1;
        heap.push(Reverse((at, order, ev)));
    };
    let hb = c.timeouts.heartbeat_interval_ms.max(1) * 1000;
    let poll = (hb / 4).max(1000);
    for i in 0..n {
        push(&mut heap, c.latency_us, Ev::Request(i));
        push(&mut heap, c.latency_us, Ev::Heartbeat(i));
    }
    for &(w, at) in &c.kills {
        if (w as usize) < n {
            push(&mut heap, at, Ev::Kill(w as usize));
        }
    }
    push(&mut heap, poll, Ev::Poll);
    let mut makespan = 0;
    let mut requeued = 0u64;
    while let Some(Reverse((now, _, ev))) = heap.pop() {
        match ev {
            Ev::Kill(i) => dead[i] = true,
            Ev::Heartbeat(i) => {
                if dead[i] || stopped[i] {
                    continue;
                }
                seq[i] += 1;
                let _ = m.heartbeat(ids[i], seq[i], now);
                push(&mut heap, now + hb, Ev::Heartbeat(i));
            }
            Ev::Poll => {
                requeued += m.poll_liveness(now).len() as u64;
                if !m.is_finished() {
                    push(&mut heap, now + poll, Ev::Poll);
                }
            }
            Ev::Request(i) => {
                if dead[i] || stopped[i] {
                    continue;
                }
                if m.request(ids[i]).is_err() {
                    push(&mut heap, now + c.retry_after_ms * 1000, Ev::Request(i));
                    continue;
                }
                for (w, reply) in m.dispatch(now) {
                    let j = ids.iter().position(|x| *x == w).expect("known worker");
                    match reply {
                        Reply::Grant { spec, attempt } => {
                            let speed = c.speeds.get(j).copied().unwrap_or(1.0);
                            let work = (by_id[&spec.task_id].work_us as f64 / speed).round() as Micros;
                            push(
                                &mut heap,
                                now + 2 * c.latency_us + work,
                                Ev::Done(j, spec.task_id, attempt),
                            );
                        }
                        Reply::NoTask => push(&mut heap, now + c.latency_us + c.retry_after_ms * 1000, Ev::Request(j)),
                        Reply::Shutdown => stopped[j] = true,
                    }
                }
            }
            Ev::Done(i, task, attempt) => {
                if dead[i] {
                    continue;
                }
                let t = by_id[&task];
                if m.complete(
                    Completion {
                        worker: ids[i],
                        task_id: task,
                        attempt,
                        outcome: t.outcome,
                        stored: None,
                        record: None,
                    },
                    now - c.latency_us,
                ) {
                    makespan = makespan.max(now);
                }
                push(&mut heap, now, Ev::Request(i));
            }
        }
        if m.is_finished() && heap.iter().all(|Reverse((_, _, e))| !matches!(e, Ev::Done(..))) {
            break;
        }
        if dead.iter().zip(&stopped).all(|(d, s)| *d || *s) {
            break;
        }
    }
    let (_, max_grant) = m.grant_bytes();
    VirtualReport {
        makespan_us: makespan,
        completed: m.count(Outcome::Completed),
        pruned: m.count(Outcome::Pruned),
        lost: m.count(Outcome::Lost),
        requeued,
        workers: m.workers().cloned().collect(),
        tasks: m.task_records(),
        log: m.log().to_vec(),
        egress_bytes: m.grant_bytes().0,
        max_grant_bytes: max_grant,
        finished: m.is_finished(),
    }
}
