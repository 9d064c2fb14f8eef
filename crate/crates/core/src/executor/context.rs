//! The payload a planner hands to a renderer.

use crate::codec::{CodecError, Encoder, Record};
use crate::model::wire::{decode_sequence, decode_spec, encode_sequence, encode_spec};
use crate::model::{TaskSpec, TrajectorySequence};

const CTX_SPEC: u8 = 1;
const CTX_SEQUENCE: u8 = 2;

/// Task metadata plus its planned sequence. Only encoded bytes cross the
/// queue, so a context survives a renderer restart unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct SimContext {
    pub spec: TaskSpec,
    pub sequence: TrajectorySequence,
}

impl SimContext {
    pub fn new(spec: TaskSpec, sequence: TrajectorySequence) -> Self {
        SimContext { spec, sequence }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.nested(CTX_SPEC, &encode_spec(&self.spec))
            .nested(CTX_SEQUENCE, &encode_sequence(&self.sequence));
        e.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let r = Record::parse(bytes)?;
        Ok(SimContext {
            spec: decode_spec(&r.nested(CTX_SPEC)?)?,
            sequence: decode_sequence(&r.nested(CTX_SEQUENCE)?)?,
        })
    }
}
