//! Fixtures shared by the benchmarks.

use pipegen_core::model::{validate_config, PipelineConfig, StageKind, ValidatedConfig};
use pipegen_core::workloads::{TaskPool, SCALING_COMPLEXITY_SIGMA};

/// A preset with `tasks` tasks and dynamic loading on.
pub fn preset(name: &str, tasks: u64) -> ValidatedConfig {
    validate_config(&PipelineConfig::from_preset(name).tasks(tasks).dynload(true)).expect("preset is valid")
}

/// A constant-latency two-stage config with `tasks` tasks.
pub fn constant(tasks: u64, planners: u32, renderers: u32) -> ValidatedConfig {
    let c = PipelineConfig::new()
        .stage_ms(StageKind::Load, 1.0)
        .stage_ms(StageKind::Plan, 2.0)
        .stage_ms(StageKind::Render, 3.0)
        .stage_ms(StageKind::Store, 1.0)
        .frames(1)
        .tasks(tasks)
        .workers(planners, renderers);
    validate_config(&c).expect("config is valid")
}

/// The heterogeneous scaling pool for `preset`.
pub fn scaling_pool(preset_name: &str, tasks: u64) -> TaskPool {
    let cfg = validate_config(&PipelineConfig::from_preset(preset_name)).expect("preset is valid");
    TaskPool::heterogeneous(&cfg, tasks, SCALING_COMPLEXITY_SIGMA, cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        assert_eq!(preset("genmanip", 10).task_count, 10);
        assert_eq!(constant(5, 2, 1).planner_workers, 2);
        assert_eq!(scaling_pool("nav_gs", 64).len(), 64);
    }
}
