use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use pipegen_core::executor::{run_policy, RunOptions};
use pipegen_core::metrics::{Policy, Summary};
use pipegen_core::sim;

use crate::config::Overrides;

pub fn run(ov: &Overrides, output: Option<PathBuf>, dir: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = ov.load()?;
    let policy = Policy::for_config(&cfg);
    let path = ov.metrics_path(dir.as_deref(), "run", &cfg, policy)?;
    let opts = RunOptions {
        metrics_path: Some(path.clone()),
        output_path: output,
        ..RunOptions::default()
    };
    let out = run_policy(&cfg, policy, opts).context("run failed")?;
    print_summary(&cfg.pipeline_id, policy, &out.metrics.summary);
    println!("metrics      {}", path.display());
    Ok(ExitCode::SUCCESS)
}

pub fn simulate(ov: &Overrides, dir: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = ov.load()?;
    let result = sim::simulate(&cfg).context("simulation failed")?;
    let path = ov.metrics_path(dir.as_deref(), "simulate", &cfg, result.policy)?;
    let metrics = result.to_metrics(&cfg);
    metrics
        .write_jsonl(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    print_summary(&cfg.pipeline_id, result.policy, &metrics.summary);
    println!("metrics      {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

pub fn print_summary(pipeline: &str, policy: Policy, s: &Summary) {
    println!("pipeline     {pipeline} ({policy})");
    println!("makespan_ms  {:.3}", s.makespan_ms);
    println!("completed    {}", s.completed);
    println!("pruned       {}", s.pruned);
    println!("lost         {}", s.lost);
    println!("mu_plan      {}", opt(s.mu_plan));
    println!("mu_render    {}", opt(s.mu_render));
    println!("lambda_theory {}", opt(s.lambda_theory));
    println!("lambda_base  {}", opt(s.lambda_base));
    println!("lambda_succ  {:.3}", s.lambda_succ);
}
