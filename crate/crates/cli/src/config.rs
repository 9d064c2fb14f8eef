use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use pipegen_core::metrics::Policy;
use pipegen_core::model::{validate_config, Mode, PipelineConfig, ValidatedConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

impl From<OnOff> for bool {
    fn from(v: OnOff) -> bool {
        v == OnOff::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CliMode {
    Serial,
    Pipelined,
}

/// A config file plus the command-line overrides applied on top of it.
#[derive(Debug, Clone, Args)]
pub struct Overrides {
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<CliMode>,
    #[arg(long, value_name = "N")]
    pub planners: Option<u32>,
    #[arg(long, value_name = "N")]
    pub renderers: Option<u32>,
    #[arg(long, value_enum)]
    pub dynload: Option<OnOff>,
    #[arg(long, value_name = "M")]
    pub tasks: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON-lines metrics destination.
    #[arg(long, value_name = "PATH")]
    pub metrics_out: Option<PathBuf>,
}

impl Overrides {
    pub fn load(&self) -> Result<ValidatedConfig> {
        let mut pc = PipelineConfig::from_file(&self.config)
            .with_context(|| format!("reading config {}", self.config.display()))?;
        self.apply(&mut pc);
        validate_config(&pc).with_context(|| format!("invalid config {}", self.config.display()))
    }

    fn apply(&self, pc: &mut PipelineConfig) {
        match self.mode {
            Some(CliMode::Serial) => pc.mode = Mode::SerialBaseline,
            Some(CliMode::Pipelined) if pc.mode == Mode::SerialBaseline => pc.mode = Mode::Realtime,
            _ => {}
        }
        if let Some(n) = self.planners {
            pc.planner_workers = Some(n);
        }
        if let Some(n) = self.renderers {
            pc.renderer_workers = Some(n);
        }
        if let Some(d) = self.dynload {
            pc.dynload = Some(d.into());
        }
        if let Some(m) = self.tasks {
            pc.task_count = Some(m);
        }
        if let Some(s) = self.seed {
            pc.seed = s;
        }
    }

    /// `--metrics-out`, or a file named after the run in `dir` (the current
    /// directory when unset).
    pub fn metrics_path(
        &self,
        dir: Option<&Path>,
        command: &str,
        cfg: &ValidatedConfig,
        policy: Policy,
    ) -> Result<PathBuf> {
        if let Some(p) = &self.metrics_out {
            return Ok(p.clone());
        }
        let dir = dir.unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let hash = cfg.config_hash();
        Ok(dir.join(format!(
            "{command}-{}-{policy}-{}.jsonl",
            cfg.pipeline_id,
            &hash[..hash.len().min(12)]
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn overrides() -> Overrides {
        Overrides {
            config: PathBuf::from("unused.toml"),
            mode: None,
            planners: None,
            renderers: None,
            dynload: None,
            tasks: None,
            seed: None,
            metrics_out: None,
        }
    }

    #[test]
    fn flags_override_the_file() {
        let mut pc = PipelineConfig::from_preset("genmanip").dynload(true);
        let o = Overrides {
            mode: Some(CliMode::Serial),
            planners: Some(3),
            dynload: Some(OnOff::Off),
            tasks: Some(7),
            ..overrides()
        };
        o.apply(&mut pc);
        let cfg = validate_config(&pc).unwrap();
        assert_eq!(cfg.mode, Mode::SerialBaseline);
        assert_eq!(cfg.planner_workers, 3);
        assert!(!cfg.dynload);
        assert_eq!(cfg.task_count, 7);
    }

    #[test]
    fn pipelined_keeps_a_simulated_mode() {
        let mut pc = PipelineConfig::from_preset("genmanip").mode(Mode::Simulated);
        Overrides {
            mode: Some(CliMode::Pipelined),
            ..overrides()
        }
        .apply(&mut pc);
        assert_eq!(pc.mode, Mode::Simulated);
    }

    #[test]
    fn default_metrics_path_lands_in_the_directory() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = validate_config(&PipelineConfig::from_preset("simbox")).unwrap();
        let p = overrides()
            .metrics_path(Some(&dir.path().join("m")), "run", &cfg, Policy::Serial)
            .unwrap();
        assert!(p.starts_with(dir.path().join("m")));
        assert!(p
            .file_name()
            .unwrap()
            .to_str()
            .unwrap()
            .starts_with("run-simbox-serial-"));
    }
}
