use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use log::info;
use pipegen_core::cluster::{
    cluster_metrics, connect_tcp, master_for, run_node, Connector, ContextStore, NodeOptions, ServeOptions, TcpMaster,
};
use pipegen_core::metrics::Policy;
use pipegen_core::model::{validate_config, PipelineConfig, StageSet, SyntheticStages, WorkerRole};

use crate::config::Overrides;
use crate::run::print_summary;

pub fn master(listen: &str, ov: &Overrides, workers: Option<u32>, dir: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = ov.load()?;
    let master = master_for(&cfg, workers.unwrap_or(cfg.renderer_workers));
    let opts = ServeOptions::for_master(&master);
    let tcp = TcpMaster::bind(master, listen, opts).with_context(|| format!("binding {listen}"))?;
    // Tests and scripts read the bound port from this line.
    println!("listening    {}", tcp.local_addr());
    info!("serving {} tasks", cfg.task_count);
    let (master, r) = tcp.run();
    r.context("master failed")?;
    let policy = if cfg.dynload {
        Policy::DynamicPipeline
    } else {
        Policy::StaticPipeline
    };
    let path = ov.metrics_path(dir.as_deref(), "master", &cfg, policy)?;
    let metrics = cluster_metrics(&cfg, &master);
    metrics
        .write_jsonl(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    print_summary(&cfg.pipeline_id, policy, &metrics.summary);
    let (grant_total, grant_max) = master.grant_bytes();
    println!("workers      {}", master.workers().count());
    println!("grant_bytes  {grant_total} (max {grant_max})");
    println!("duplicates   {}", master.duplicates());
    println!("metrics      {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn default_node_id() -> String {
    let host = std::env::var("HOSTNAME").unwrap_or_else(|_| "node".into());
    format!("{host}-{}", std::process::id())
}

pub fn worker(addr: &str, role: WorkerRole, slots: u32, config: &Path, node_id: Option<String>) -> Result<ExitCode> {
    if slots == 0 {
        bail!("--slots must be at least 1");
    }
    let pc = PipelineConfig::from_file(config).with_context(|| format!("reading config {}", config.display()))?;
    let cfg = Arc::new(validate_config(&pc)?);
    let mut opts = NodeOptions::new(node_id.unwrap_or_else(default_node_id), role, slots);
    opts.heartbeat_interval = Duration::from_millis(cfg.cluster.heartbeat_interval_ms.max(1));
    opts.supervisor = cfg.supervisor.clone();
    opts.store = ContextStore::from_env();
    let addr = addr.to_string();
    let connect: Connector = Arc::new(move || connect_tcp(addr.as_str()));
    let stages: Arc<dyn StageSet> = Arc::new(SyntheticStages::new(cfg.clone()));
    let report = run_node(cfg, stages, opts, connect).context("worker failed")?;
    println!("completed    {}", report.completed);
    println!("pruned       {}", report.pruned);
    println!("lost         {}", report.lost);
    println!("aborted      {}", report.aborted);
    if !report.errors.is_empty() {
        for e in &report.errors {
            eprintln!("error: {e}");
        }
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}
