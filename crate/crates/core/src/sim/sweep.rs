use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::workloads::TaskPool;
use crate::Micros;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub workers: u32,
    pub makespan_us: Micros,
    /// Tasks per second.
    pub throughput: f64,
    pub efficiency: f64,
    /// Busiest worker's busy time over the mean.
    pub busy_spread: f64,
}

fn scaled(work: Micros, speed: f64) -> Micros {
    (work as f64 / speed).round() as Micros
}

/// Schedules `pool` in order onto workers with the given speed factors.
/// With `dynload` each task goes to the worker that frees up first (lowest
/// id on ties), as pull-based assignment does; otherwise task `k` goes to
/// worker `k mod w`. Returns the per-worker busy time.
pub fn list_schedule(pool: &TaskPool, speeds: &[f64], dynload: bool) -> Vec<Micros> {
    let w = speeds.len();
    let mut busy = vec![0; w];
    if w == 0 {
        return busy;
    }
    if dynload {
        let mut free: BinaryHeap<Reverse<(Micros, usize)>> = (0..w).map(|i| Reverse((0, i))).collect();
        for t in &pool.tasks {
            let Reverse((at, i)) = free.pop().expect("nonempty");
            let end = at + scaled(t.work_us, speeds[i]);
            busy[i] = end;
            free.push(Reverse((end, i)));
        }
    } else {
        for (k, t) in pool.tasks.iter().enumerate() {
            busy[k % w] += scaled(t.work_us, speeds[k % w]);
        }
    }
    busy
}

/// Throughput and scaling efficiency relative to the first worker count.
/// `speeds` must cover the largest count; a count `w` uses its first `w`
/// entries.
pub fn scaling_sweep(pool: &TaskPool, worker_counts: &[u32], dynload: bool, speeds: &[f64]) -> Vec<ScalingPoint> {
    let mut out: Vec<ScalingPoint> = Vec::with_capacity(worker_counts.len());
    for &w in worker_counts {
        let busy = list_schedule(pool, &speeds[..w as usize], dynload);
        let makespan = busy.iter().copied().max().unwrap_or(0);
        let throughput = if makespan > 0 {
            pool.len() as f64 / (makespan as f64 / 1e6)
        } else {
            0.0
        };
        let efficiency = match out.first() {
            Some(base) => throughput / (f64::from(w) / f64::from(base.workers) * base.throughput),
            None => 1.0,
        };
        let mean = busy.iter().sum::<Micros>() as f64 / busy.len().max(1) as f64;
        out.push(ScalingPoint {
            workers: w,
            makespan_us: makespan,
            throughput,
            efficiency,
            busy_spread: if mean > 0.0 { makespan as f64 / mean } else { 1.0 },
        });
    }
    out
}
