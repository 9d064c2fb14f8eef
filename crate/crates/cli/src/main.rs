//! `pipegen`: run, simulate, distribute and analyze staged data-generation
//! workloads.

mod cluster;
mod config;
mod report;
mod run;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Overrides;

/// A config file using every section; shown in `--help` and parsed by tests.
const CONFIG_EXAMPLE: &str = r#"workload = "genmanip"
mode = "realtime"
task_count = 200
seed = 0
planner_workers = 4
renderer_workers = 2
dynload = true
async_store = true
time_scale = 1.0
frames = { kind = "constant", frames = 4 }

[stages.render]
latency = { kind = "lognormal", mu = 4.7, sigma = 0.2 }
failure_prob = 0.0
hang_prob = 0.0

[stages.store]
latency = { kind = "constant", ms = 56.0 }

[batch_writer]
batch_size = 8
flush_interval_ms = 100.0

[cluster]
heartbeat_interval_ms = 1000
suspect_timeout_ms = 3000
dead_timeout_ms = 10000
max_attempts = 3
"#;

const CONFIG_HELP: &str = concat!(
    "Config files are TOML. Every key is optional; unset keys come from the\n",
    "workload preset named by `workload` (genmanip, simbox, nav_mesh) or from\n",
    "built-in defaults. Stages are load, randomize, plan, render and store;\n",
    "latency kinds are constant {ms}, uniform {lo, hi} and lognormal {mu, sigma}.\n\n",
    "Metrics files default to $NIMBUS_METRICS_DIR (or the current directory).\n",
    "Workers load scene contexts from $NIMBUS_SHARED_DIR when it is set.\n\n",
    "Example:\n\n",
);

#[derive(Parser)]
#[command(name = "pipegen", version, about, after_long_help = long_help())]
struct Cli {
    /// Directory for metrics files written without an explicit path.
    #[arg(long, global = true, env = "NIMBUS_METRICS_DIR", value_name = "DIR")]
    metrics_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a workload in real time.
    Run {
        #[command(flatten)]
        cfg: Overrides,
        /// Output log of stored records.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Predict a workload's timing with the discrete-event simulator.
    Simulate {
        #[command(flatten)]
        cfg: Overrides,
    },
    /// Serve tasks to workers over TCP.
    Master {
        #[arg(long, value_name = "ADDR")]
        listen: String,
        #[command(flatten)]
        cfg: Overrides,
        /// Worker slots expected by static (round-robin) dispatch.
        #[arg(long)]
        workers: Option<u32>,
    },
    /// Pull tasks from a master.
    Worker {
        #[arg(long, value_name = "ADDR")]
        master: String,
        #[arg(long, default_value = "fused")]
        role: pipegen_core::model::WorkerRole,
        #[arg(long, default_value_t = 1)]
        slots: u32,
        /// Workload definition the granted tasks refer to.
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Node name reported to the master; defaults to host and pid.
        #[arg(long)]
        node_id: Option<String>,
    },
    /// Throughput analytics and self-consistency check of a metrics file.
    Analyze {
        #[arg(long, value_name = "PATH")]
        metrics: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
        /// Exit with status 3 when the file fails its self-consistency check.
        #[arg(long)]
        strict: bool,
    },
    /// Speedup of a candidate run over a baseline run.
    Compare {
        baseline: PathBuf,
        candidate: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Scaling-efficiency sweep over worker counts, as CSV.
    Sweep {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128")]
        workers: Vec<u32>,
        /// Pool size; the config's task count when unset.
        #[arg(long)]
        tasks: Option<u64>,
        #[arg(long, value_enum)]
        dynload: Option<config::OnOff>,
        /// Log-standard-deviation of per-scene complexity.
        #[arg(long, default_value_t = pipegen_core::workloads::SCALING_COMPLEXITY_SIGMA)]
        sigma: f64,
        /// Worker speed factors are drawn from 1 ± spread.
        #[arg(long, default_value_t = 0.0)]
        speed_spread: f64,
        /// CSV destination; stdout when unset.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let dir = cli.metrics_dir;
    let r = match cli.command {
        Command::Run { cfg, output } => run::run(&cfg, output, dir),
        Command::Simulate { cfg } => run::simulate(&cfg, dir),
        Command::Master { listen, cfg, workers } => cluster::master(&listen, &cfg, workers, dir),
        Command::Worker {
            master,
            role,
            slots,
            config,
            node_id,
        } => cluster::worker(&master, role, slots, &config, node_id),
        Command::Analyze { metrics, json, strict } => report::analyze(&metrics, json, strict),
        Command::Compare {
            baseline,
            candidate,
            json,
        } => report::compare(&baseline, &candidate, json),
        Command::Sweep {
            config,
            workers,
            tasks,
            dynload,
            sigma,
            speed_spread,
            out,
        } => sweep::sweep(&sweep::SweepArgs {
            config,
            workers,
            tasks,
            dynload: dynload.map(bool::from),
            sigma,
            speed_spread,
            out,
        }),
    };
    match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn long_help() -> String {
    format!("{CONFIG_HELP}{CONFIG_EXAMPLE}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use pipegen_core::model::{validate_config, PipelineConfig};

    #[test]
    fn help_example_is_a_valid_config() {
        let cfg = PipelineConfig::from_toml_str(CONFIG_EXAMPLE).unwrap();
        validate_config(&cfg).unwrap();
    }

    #[test]
    fn arguments_are_consistent() {
        Cli::command().debug_assert();
    }
}
