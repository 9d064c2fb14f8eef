//! Task pools for scaling experiments.
//!
//! A pool assigns each task the virtual time it occupies one fused worker.
//! Heterogeneous pools scale the configured stage draws by a per-scene
//! complexity factor, lognormal with mean 1.

use rand::Rng;
use rand_distr::{Distribution, LogNormal};

use crate::model::rng::{stream_rng, Stream};
use crate::model::{TaskDraws, TaskId, ValidatedConfig};
use crate::Micros;

/// Per-scene complexity spread of the scaling experiment's task pool.
pub const SCALING_COMPLEXITY_SIGMA: f64 = 0.62;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolTask {
    pub task_id: TaskId,
    pub scene_ref: String,
    pub work_us: Micros,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaskPool {
    pub tasks: Vec<PoolTask>,
}

impl TaskPool {
    /// `n` identical tasks of `ms` each.
    pub fn homogeneous(n: u64, ms: f64) -> Self {
        let work_us = crate::ms_to_us(ms);
        TaskPool {
            tasks: (0..n)
                .map(|i| PoolTask {
                    task_id: i,
                    scene_ref: format!("scene-{i:05}"),
                    work_us,
                })
                .collect(),
        }
    }

    /// `n` tasks of `cfg`'s workload, each executed Load through Render on
    /// one unit with stores offloaded, scaled by a per-task complexity factor
    /// with log-standard-deviation `complexity_sigma`.
    pub fn heterogeneous(cfg: &ValidatedConfig, n: u64, complexity_sigma: f64, seed: u64) -> Self {
        let mut cfg = cfg.clone();
        cfg.task_count = n;
        cfg.scene_count = n.max(1);
        cfg.seed = seed;
        let complexity = LogNormal::new(-complexity_sigma * complexity_sigma / 2.0, complexity_sigma)
            .expect("sigma must be finite and >= 0");
        let tasks = cfg
            .tasks()
            .into_iter()
            .map(|spec| {
                let d = TaskDraws::draw(&spec, &cfg);
                let mut work = d.load_us + d.randomize_us + d.plan_us;
                if d.valid {
                    work += d.render_us;
                }
                let c: f64 = complexity.sample(&mut stream_rng(spec.rng_seed, spec.task_id, Stream::Aux(7)));
                PoolTask {
                    task_id: spec.task_id,
                    scene_ref: spec.scene_ref,
                    work_us: (work as f64 * c).round() as Micros,
                }
            })
            .collect();
        TaskPool { tasks }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn total_us(&self) -> Micros {
        self.tasks.iter().map(|t| t.work_us).sum()
    }

    pub fn max_us(&self) -> Micros {
        self.tasks.iter().map(|t| t.work_us).max().unwrap_or(0)
    }
}

/// Per-worker speed factors, uniform in `[1 - spread, 1 + spread]`. Worker
/// `i` gets the same factor whatever the total count, so sweep points share
/// hardware.
pub fn worker_speeds(n: u32, spread: f64, seed: u64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if spread == 0.0 {
                1.0
            } else {
                let u: f64 = stream_rng(seed, u64::from(i), Stream::Aux(11)).random();
                1.0 - spread + 2.0 * spread * u
            }
        })
        .collect()
}
