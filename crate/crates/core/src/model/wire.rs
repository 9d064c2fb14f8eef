//! Tagged binary encodings of task metadata and planned sequences.

use std::collections::BTreeMap;

use super::profile::WorkloadProfile;
use super::types::{StageKind, TaskSpec, TrajectorySequence};
use crate::codec::{CodecError, Encoder, Record};

const SPEC_TASK: u8 = 1;
const SPEC_SCENE: u8 = 2;
const SPEC_PIPELINE: u8 = 3;
const SPEC_SEED: u8 = 4;
const SPEC_OVERRIDES: u8 = 5;

const SEQ_TASK: u8 = 1;
const SEQ_FRAMES: u8 = 2;
const SEQ_PLAN_MS: u8 = 3;
const SEQ_VALID: u8 = 4;
const SEQ_VARIANT: u8 = 5;

/// Field 5 holds per-stage overrides as JSON; it is omitted when absent.
pub fn encode_spec(spec: &TaskSpec) -> Encoder {
    let mut e = Encoder::new();
    e.u64(SPEC_TASK, spec.task_id)
        .str(SPEC_SCENE, &spec.scene_ref)
        .str(SPEC_PIPELINE, &spec.pipeline_id)
        .u64(SPEC_SEED, spec.rng_seed);
    if let Some(ov) = &spec.workload_overrides {
        e.bytes(SPEC_OVERRIDES, &serde_json::to_vec(ov).expect("profiles serialize"));
    }
    e
}

pub fn decode_spec(r: &Record<'_>) -> Result<TaskSpec, CodecError> {
    let workload_overrides = match r.get(SPEC_OVERRIDES) {
        None => None,
        Some(_) => {
            let map: BTreeMap<StageKind, WorkloadProfile> =
                serde_json::from_slice(r.bytes(SPEC_OVERRIDES)?).map_err(|e| CodecError::Invalid {
                    tag: SPEC_OVERRIDES,
                    reason: e.to_string(),
                })?;
            Some(map)
        }
    };
    Ok(TaskSpec {
        task_id: r.u64(SPEC_TASK)?,
        scene_ref: r.str(SPEC_SCENE)?.to_string(),
        pipeline_id: r.str(SPEC_PIPELINE)?.to_string(),
        workload_overrides,
        rng_seed: r.u64(SPEC_SEED)?,
    })
}

pub fn encode_sequence(seq: &TrajectorySequence) -> Encoder {
    let mut e = Encoder::new();
    e.u64(SEQ_TASK, seq.task_id)
        .u64(SEQ_FRAMES, u64::from(seq.frame_count))
        .f64(SEQ_PLAN_MS, seq.plan_latency_ms)
        .bool(SEQ_VALID, seq.valid)
        .u64(SEQ_VARIANT, seq.scene_variant);
    e
}

pub fn decode_sequence(r: &Record<'_>) -> Result<TrajectorySequence, CodecError> {
    Ok(TrajectorySequence {
        task_id: r.u64(SEQ_TASK)?,
        frame_count: r.u32(SEQ_FRAMES)?,
        plan_latency_ms: r.f64(SEQ_PLAN_MS)?,
        valid: r.bool(SEQ_VALID)?,
        scene_variant: r.u64_or(SEQ_VARIANT, 0)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trip_with_overrides() {
        let mut spec = TaskSpec::new(42, "scene-7", 99);
        spec.workload_overrides = Some([(StageKind::Render, WorkloadProfile::constant(3.5))].into());
        let bytes = encode_spec(&spec).into_bytes();
        assert_eq!(decode_spec(&Record::parse(&bytes).unwrap()).unwrap(), spec);
    }

    #[test]
    fn sequence_round_trip() {
        let seq = TrajectorySequence {
            task_id: 3,
            frame_count: 32,
            plan_latency_ms: 12.25,
            valid: true,
            scene_variant: u64::MAX,
        };
        let bytes = encode_sequence(&seq).into_bytes();
        assert_eq!(decode_sequence(&Record::parse(&bytes).unwrap()).unwrap(), seq);
    }
}
