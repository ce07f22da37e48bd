//! Multi-probe zero-collision hashing for embedding tables.
//!
//! Each id owns a dedicated row when one is available within `max_probe`
//! slots of its hashed home slot. Occupancy is tracked in per-shard identity
//! and metadata arrays, stale rows are reclaimed lazily under TTL or LRU
//! eviction, and reclaimed rows start from a fresh initialization.
//!
//! Main entry points:
//!
//! - [`probe`]: the single-shard two-pass lookup/insert/evict procedure.
//! - [`batch`]: deduplicated batched execution across shards.
//! - [`Model`]: index plus embedding rows with eviction resets.
//! - [`publish`]: read-only snapshots and incremental delta logs.
//! - [`experiments`]: collision, churn and throughput harnesses.
//!
//! ```
//! use mpzch::{EvictionPolicy, IdBatch, ModelF32, Outcome, RowInit, TableLayout};
//!
//! let layout = TableLayout::uniform(1024, 4, 7).unwrap();
//! let mut model = ModelF32::new(layout, 16, 8, EvictionPolicy::Lru, RowInit::new(1)).unwrap();
//! let out = model.train_batch(&IdBatch::from_raw(&[10, 20, 10], 0).unwrap()).unwrap();
//! assert_eq!(out.results[0], out.results[2]);
//! assert_eq!(out.unique_results[0].outcome, Outcome::Inserted);
//! ```

pub mod baseline;
pub mod batch;
pub mod embedding;
mod error;
pub mod eviction;
pub mod experiments;
pub mod hash;
pub mod model;
pub mod probe;
pub mod publish;
pub mod scalar;
pub mod shard;

pub use baseline::{baseline_assign, BaselineConfig};
pub use batch::{
    dedup, process_batch, process_batch_sequential, BatchOutput, DedupResult, IdBatch,
};
pub use embedding::{EmbeddingTable, RowInit};
pub use error::{Error, Result};
pub use eviction::{
    is_expired, select_victim_lru, EvictionPolicy, Feature, TtlPolicy, WindowEntry,
};
pub use hash::mix64;
pub use model::{Model, PublishMark};
pub use probe::{
    home_slot, lookup_or_insert, lookup_readonly, Id, IdentityArray, MetadataArray, Outcome,
    ProbeResult, Shard, ShardConfig, EMPTY, MAX_ID,
};
pub use publish::{
    dirty_since, read_snapshot, write_snapshot, DeltaLog, DeltaRecord, FrozenModel, Publisher,
    Replica,
};
pub use scalar::Scalar;
pub use shard::{shard_of, to_global, ShardedIndex, TableLayout};

pub type EmbeddingTableF32 = EmbeddingTable<f32>;
pub type EmbeddingTableF64 = EmbeddingTable<f64>;
pub type ModelF32 = Model<f32>;
pub type ModelF64 = Model<f64>;
pub type FrozenModelF32 = FrozenModel<f32>;
pub type FrozenModelF64 = FrozenModel<f64>;
pub type ReplicaF32 = Replica<f32>;
pub type DeltaLogF32 = DeltaLog<f32>;
