use std::io;

use thiserror::Error;

/// Errors raised by the index, the embedding store and the publish pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "id {raw:#x} is outside the 63-bit id space (the all-ones pattern is the empty sentinel)"
    )]
    InvalidId { raw: u64 },

    #[error("invalid shard config: capacity {capacity}, max_probe {max_probe}")]
    InvalidShardConfig { capacity: usize, max_probe: usize },

    #[error("invalid layout: {reason}")]
    InvalidLayout { reason: String },

    #[error("metadata {meta} is inconsistent with {mode} policy at time {now}")]
    MetadataMismatch {
        meta: u64,
        now: u64,
        mode: &'static str,
    },

    #[error("ttl durations must be strictly positive")]
    NonPositiveTtl,

    #[error("timestamp overflow computing {now} + {ttl}")]
    TimestampOverflow { now: u64, ttl: u64 },

    #[error("lru victim selection over an empty window")]
    EmptyWindow,

    #[error("shard {shard} out of range ({num_shards} shards)")]
    ShardOutOfRange { shard: usize, num_shards: usize },

    #[error("slot {slot} out of range for shard {shard} (capacity {capacity})")]
    SlotOutOfRange {
        shard: usize,
        slot: usize,
        capacity: usize,
    },

    #[error("row {row} out of range ({rows} rows)")]
    RowOutOfRange { row: usize, rows: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(&'static str),

    #[error("batch position {position}: {source}")]
    AtPosition {
        position: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("table is frozen; only read-only lookups and gathers are allowed")]
    Frozen,

    #[error("unknown or stale publish mark")]
    UnknownMark,

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("scalar width mismatch: file has {found}-byte elements, reader expects {expected}")]
    ScalarMismatch { expected: u32, found: u32 },

    #[error("truncated file: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error(
        "delta lineage mismatch: log is based on {log:#010x}, replica is based on {replica:#010x}"
    )]
    LineageMismatch { log: u32, replica: u32 },

    #[error("out-of-order delta: expected sequence {expected}, found {found}")]
    OutOfOrder { expected: u64, found: u64 },

    #[error("invalid workload: {0}")]
    InvalidSpec(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn at(self, position: usize) -> Self {
        Error::AtPosition {
            position,
            source: Box::new(self),
        }
    }
}
