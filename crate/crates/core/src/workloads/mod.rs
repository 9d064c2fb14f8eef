//! Synthetic workload presets, fault schedules and task pools.

mod faults;
mod pool;
mod presets;

pub use faults::{
    apply_faults, Fault, FaultKind, FaultPlan, FaultSchedule, FaultTarget, FaultTrigger, FiredFault, TargetNotFound,
    Topology,
};
pub use pool::{worker_speeds, PoolTask, TaskPool, SCALING_COMPLEXITY_SIGMA};
pub use presets::{
    preset, PresetName, RenderVariant, UnknownPreset, WorkloadPreset, NAV_MESH_RENDER_BASELINE_MS,
    NAV_MESH_RENDER_OPTIMIZED_MS, STORE_MS_PER_FRAME,
};
