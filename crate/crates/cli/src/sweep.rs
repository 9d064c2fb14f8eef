use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use pipegen_core::model::{validate_config, PipelineConfig};
use pipegen_core::sim::{scaling_sweep, ScalingPoint};
use pipegen_core::workloads::{worker_speeds, TaskPool};

pub struct SweepArgs {
    pub config: PathBuf,
    pub workers: Vec<u32>,
    pub tasks: Option<u64>,
    pub dynload: Option<bool>,
    pub sigma: f64,
    pub speed_spread: f64,
    pub out: Option<PathBuf>,
}

pub fn sweep(a: &SweepArgs) -> Result<ExitCode> {
    if a.workers.is_empty() || a.workers.contains(&0) {
        bail!("--workers needs positive counts");
    }
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        bail!("--sigma must be finite and non-negative");
    }
    if !(0.0..1.0).contains(&a.speed_spread) {
        bail!("--speed-spread must be in [0, 1)");
    }
    let pc = PipelineConfig::from_file(&a.config).with_context(|| format!("reading config {}", a.config.display()))?;
    let cfg = validate_config(&pc)?;
    let n = a.tasks.unwrap_or(cfg.task_count);
    let dynload = a.dynload.unwrap_or(cfg.dynload);
    let pool = TaskPool::heterogeneous(&cfg, n, a.sigma, cfg.seed);
    let max = a.workers.iter().copied().max().unwrap_or(1);
    let speeds = worker_speeds(max, a.speed_spread, cfg.seed);
    let points = scaling_sweep(&pool, &a.workers, dynload, &speeds);
    let csv = to_csv(&points, dynload)?;
    match &a.out {
        Some(p) => std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(&csv)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn to_csv(points: &[ScalingPoint], dynload: bool) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "workers",
        "dynload",
        "makespan_ms",
        "throughput_tps",
        "efficiency",
        "busy_spread",
    ])?;
    for p in points {
        w.write_record([
            p.workers.to_string(),
            dynload.to_string(),
            format!("{:.3}", p.makespan_us as f64 / 1000.0),
            format!("{:.4}", p.throughput),
            format!("{:.4}", p.efficiency),
            format!("{:.4}", p.busy_spread),
        ])?;
    }
    Ok(w.into_inner()?)
}
