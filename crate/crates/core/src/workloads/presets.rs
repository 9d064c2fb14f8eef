//! Named workload presets emulating the four evaluation pipelines.
//!
//! Only the Nav-Mesh render latencies (446.29 ms baseline, 159.46 ms
//! optimized, per frame) and the 56 ms/frame store latency are measured
//! values. Every other latency here is artifact-chosen.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FrameDist, LatencyDist, StageKind, WorkloadProfile};

pub const NAV_MESH_RENDER_BASELINE_MS: f64 = 446.29;
pub const NAV_MESH_RENDER_OPTIMIZED_MS: f64 = 159.46;
pub const STORE_MS_PER_FRAME: f64 = 56.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown workload preset `{0}` (known: nav_gs, nav_mesh, genmanip, simbox, custom)")]
pub struct UnknownPreset(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    NavGs,
    NavMesh,
    Genmanip,
    Simbox,
    Custom,
}

impl PresetName {
    pub const ALL: [PresetName; 5] = [
        PresetName::NavGs,
        PresetName::NavMesh,
        PresetName::Genmanip,
        PresetName::Simbox,
        PresetName::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::NavGs => "nav_gs",
            PresetName::NavMesh => "nav_mesh",
            PresetName::Genmanip => "genmanip",
            PresetName::Simbox => "simbox",
            PresetName::Custom => "custom",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = UnknownPreset;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownPreset(s.to_string()))
    }
}

/// Which render profile a preset uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderVariant {
    #[default]
    Baseline,
    Optimized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadPreset {
    pub name: PresetName,
    pub stages: BTreeMap<StageKind, WorkloadProfile>,
    /// Render profile of the optimized backend, when it differs.
    pub optimized_render: Option<WorkloadProfile>,
    /// Plan and Render run synchronously on one unit.
    pub fusion: bool,
    pub planner_workers: u32,
    pub renderer_workers: u32,
    pub frames: FrameDist,
    pub task_count: u64,
}

impl WorkloadPreset {
    pub fn stages_for(&self, variant: RenderVariant) -> BTreeMap<StageKind, WorkloadProfile> {
        let mut stages = self.stages.clone();
        if let (RenderVariant::Optimized, Some(r)) = (variant, &self.optimized_render) {
            stages.insert(StageKind::Render, r.clone());
        }
        stages
    }
}

fn stage_map(entries: &[(StageKind, WorkloadProfile)]) -> BTreeMap<StageKind, WorkloadProfile> {
    entries.iter().cloned().collect()
}

pub fn preset(name: &str) -> Result<WorkloadPreset, UnknownPreset> {
    use StageKind::*;
    let name: PresetName = name.parse()?;
    let store = WorkloadProfile::constant(STORE_MS_PER_FRAME);
    let p = match name {
        PresetName::NavGs => WorkloadPreset {
            name,
            stages: stage_map(&[
                (Load, WorkloadProfile::constant(400.0)),
                (Plan, WorkloadProfile::constant(20.0)),
                (Render, WorkloadProfile::constant(35.0)),
                (Store, store),
            ]),
            optimized_render: None,
            fusion: true,
            planner_workers: 1,
            renderer_workers: 1,
            frames: FrameDist::Constant { frames: 32 },
            task_count: 150,
        },
        PresetName::NavMesh => WorkloadPreset {
            name,
            stages: stage_map(&[
                (Load, WorkloadProfile::constant(500.0)),
                (Plan, WorkloadProfile::constant(15.0)),
                (Render, WorkloadProfile::constant(NAV_MESH_RENDER_BASELINE_MS)),
                (Store, store),
            ]),
            optimized_render: Some(WorkloadProfile::constant(NAV_MESH_RENDER_OPTIMIZED_MS)),
            fusion: true,
            planner_workers: 1,
            renderer_workers: 1,
            frames: FrameDist::Constant { frames: 32 },
            task_count: 450,
        },
        PresetName::Genmanip => WorkloadPreset {
            name,
            stages: stage_map(&[
                (Load, WorkloadProfile::constant(40.0)),
                (Randomize, WorkloadProfile::constant(5.0)),
                (
                    Plan,
                    WorkloadProfile::from_latency(LatencyDist::Uniform { lo: 6.0, hi: 14.0 }).with_failure(0.2),
                ),
                (Render, WorkloadProfile::constant(30.0)),
                (Store, WorkloadProfile::constant(8.0)),
            ]),
            optimized_render: None,
            fusion: false,
            planner_workers: 2,
            renderer_workers: 1,
            frames: FrameDist::Constant { frames: 4 },
            task_count: 200,
        },
        PresetName::Simbox => WorkloadPreset {
            name,
            stages: stage_map(&[
                (Load, WorkloadProfile::constant(60.0)),
                (
                    Plan,
                    WorkloadProfile::from_latency(LatencyDist::Uniform { lo: 8.0, hi: 16.0 }).with_failure(0.1),
                ),
                (Render, WorkloadProfile::constant(36.0)),
                (Store, WorkloadProfile::constant(6.0)),
            ]),
            optimized_render: None,
            fusion: false,
            planner_workers: 2,
            renderer_workers: 1,
            frames: FrameDist::Constant { frames: 4 },
            task_count: 200,
        },
        PresetName::Custom => WorkloadPreset {
            name,
            stages: BTreeMap::new(),
            optimized_render: None,
            fusion: false,
            planner_workers: 1,
            renderer_workers: 1,
            frames: FrameDist::default(),
            task_count: 1,
        },
    };
    Ok(p)
}
