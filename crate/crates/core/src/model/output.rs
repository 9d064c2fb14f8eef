//! Append-only output log of stored records.
//!
//! Each record is one length-prefixed frame of tagged fields (see
//! [`crate::codec`]). The log deduplicates by task id, so a task completed
//! twice under at-least-once execution is recorded once.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use super::types::{StageKind, StoredRecord, TaskId};
use crate::codec::{self, CodecError, Encoder, Record};

const T_TASK: u8 = 1;
const T_SCENE: u8 = 2;
const T_PIPELINE: u8 = 3;
const T_VARIANT: u8 = 4;
const T_FRAMES: u8 = 5;
const T_PAYLOAD_LEN: u8 = 6;
const T_DIGEST: u8 = 7;
const T_PROVENANCE: u8 = 8;

#[derive(Debug, Error)]
pub enum OutputLogError {
    #[error("output log i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed output record: {0}")]
    Codec(#[from] CodecError),
}

pub fn encode_record(rec: &StoredRecord) -> Vec<u8> {
    let prov: Vec<u8> = rec.provenance.iter().map(|s| s.index() as u8).collect();
    let mut e = Encoder::new();
    e.u64(T_TASK, rec.task_id)
        .str(T_SCENE, &rec.scene_ref)
        .str(T_PIPELINE, &rec.pipeline_id)
        .u64(T_VARIANT, rec.scene_variant)
        .u64(T_FRAMES, u64::from(rec.frame_count))
        .u64(T_PAYLOAD_LEN, rec.payload_len)
        .str(T_DIGEST, &rec.payload_digest)
        .bytes(T_PROVENANCE, &prov);
    e.into_bytes()
}

pub fn decode_record(buf: &[u8]) -> Result<StoredRecord, CodecError> {
    let r = Record::parse(buf)?;
    let provenance = r
        .bytes(T_PROVENANCE)?
        .iter()
        .map(|b| {
            StageKind::from_index(*b as usize).ok_or(CodecError::Invalid {
                tag: T_PROVENANCE,
                reason: format!("stage index {b}"),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(StoredRecord {
        task_id: r.u64(T_TASK)?,
        scene_ref: r.str(T_SCENE)?.to_string(),
        pipeline_id: r.str(T_PIPELINE)?.to_string(),
        scene_variant: r.u64(T_VARIANT)?,
        frame_count: r.u32(T_FRAMES)?,
        payload_len: r.u64(T_PAYLOAD_LEN)?,
        payload_digest: r.str(T_DIGEST)?.to_string(),
        provenance,
    })
}

/// Decodes a byte stream of framed records, in log order.
pub fn decode_records(bytes: &[u8]) -> Result<Vec<StoredRecord>, OutputLogError> {
    codec::split_frames(bytes)?
        .into_iter()
        .map(|f| decode_record(f).map_err(OutputLogError::from))
        .collect()
}

#[derive(Debug, Default)]
struct Inner {
    bytes: Vec<u8>,
    records: Vec<StoredRecord>,
    seen: HashSet<TaskId>,
    duplicates: u64,
    file: Option<BufWriter<File>>,
}

/// The run's output log. Shared by reference; appends are serialized.
#[derive(Debug, Default)]
pub struct OutputLog {
    inner: Mutex<Inner>,
    path: Option<PathBuf>,
}

impl OutputLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// A log mirrored to `path` (truncated on open).
    pub fn create(path: impl AsRef<Path>) -> Result<Self, OutputLogError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(&path)?;
        Ok(OutputLog {
            inner: Mutex::new(Inner {
                file: Some(BufWriter::new(file)),
                ..Inner::default()
            }),
            path: Some(path),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Appends a batch durably; records whose task id is already present are
    /// dropped. Returns the number of records actually appended.
    pub fn append_batch(&self, batch: &[StoredRecord]) -> Result<usize, OutputLogError> {
        let mut g = self.inner.lock().unwrap();
        let mut chunk = Vec::new();
        let mut fresh = Vec::new();
        for rec in batch {
            if g.seen.contains(&rec.task_id) || fresh.iter().any(|r: &StoredRecord| r.task_id == rec.task_id) {
                g.duplicates += 1;
                continue;
            }
            chunk.extend_from_slice(&codec::frame(&encode_record(rec)));
            fresh.push(rec.clone());
        }
        if let Some(f) = g.file.as_mut() {
            f.write_all(&chunk)?;
            f.flush()?;
        }
        g.bytes.extend_from_slice(&chunk);
        for rec in &fresh {
            g.seen.insert(rec.task_id);
        }
        let n = fresh.len();
        g.records.extend(fresh);
        Ok(n)
    }

    pub fn append(&self, rec: &StoredRecord) -> Result<bool, OutputLogError> {
        Ok(self.append_batch(std::slice::from_ref(rec))? == 1)
    }

    pub fn contains(&self, task_id: TaskId) -> bool {
        self.inner.lock().unwrap().seen.contains(&task_id)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Completions dropped because their task id was already logged.
    pub fn duplicates(&self) -> u64 {
        self.inner.lock().unwrap().duplicates
    }

    pub fn records(&self) -> Vec<StoredRecord> {
        self.inner.lock().unwrap().records.clone()
    }

    /// The log's byte image, identical to the file contents when file-backed.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.inner.lock().unwrap().bytes.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: TaskId) -> StoredRecord {
        StoredRecord {
            task_id: id,
            scene_ref: format!("scene-{id}"),
            pipeline_id: "custom".into(),
            scene_variant: id * 7,
            frame_count: 3,
            payload_len: 48,
            payload_digest: "00ff".into(),
            provenance: vec![StageKind::Load, StageKind::Plan, StageKind::Render, StageKind::Store],
        }
    }

    #[test]
    fn records_round_trip_through_bytes() {
        let log = OutputLog::in_memory();
        log.append_batch(&[rec(1), rec(2)]).unwrap();
        log.append(&rec(3)).unwrap();
        assert_eq!(decode_records(&log.to_bytes()).unwrap(), vec![rec(1), rec(2), rec(3)]);
    }

    #[test]
    fn duplicates_are_dropped() {
        let log = OutputLog::in_memory();
        assert_eq!(log.append_batch(&[rec(1), rec(1), rec(2)]).unwrap(), 2);
        assert!(!log.append(&rec(2)).unwrap());
        assert_eq!(log.len(), 2);
        assert_eq!(log.duplicates(), 2);
    }

    #[test]
    fn file_mirror_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.log");
        let log = OutputLog::create(&path).unwrap();
        log.append_batch(&[rec(5), rec(9)]).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), log.to_bytes());
    }
}
