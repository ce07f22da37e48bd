//! Batched execution over a sharded index.
//!
//! A batch is deduplicated, each unique id is routed to its shard, and every
//! shard applies its ids one after another in first-occurrence order. Shards
//! run in parallel; the result is identical to running everything on one
//! thread.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eviction::{EvictionPolicy, Feature};
use crate::probe::{Id, ProbeResult, Shard};
use crate::shard::ShardedIndex;

/// Ids seen in one training step, all stamped with the same time.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdBatch {
    pub ids: Vec<(Id, Feature)>,
    pub now: u64,
}

impl IdBatch {
    pub fn new(ids: Vec<(Id, Feature)>, now: u64) -> Self {
        Self { ids, now }
    }

    /// Validates raw values, all under feature 0.
    pub fn from_raw(raw: &[u64], now: u64) -> Result<Self> {
        let ids = raw
            .iter()
            .enumerate()
            .map(|(pos, &r)| Id::new(r).map(|id| (id, 0)).map_err(|e| e.at(pos)))
            .collect::<Result<_>>()?;
        Ok(Self { ids, now })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DedupResult {
    /// Distinct keys in first-occurrence order.
    pub uniques: Vec<(Id, Feature)>,
    /// For each input position, the index of its key in `uniques`.
    pub inverse: Vec<usize>,
    /// For each unique, the input position where it first appeared.
    pub first_positions: Vec<usize>,
}

pub fn dedup(batch: &IdBatch) -> DedupResult {
    let mut index: HashMap<(Id, Feature), usize> = HashMap::with_capacity(batch.ids.len());
    let mut out = DedupResult {
        uniques: Vec::new(),
        inverse: Vec::with_capacity(batch.ids.len()),
        first_positions: Vec::new(),
    };
    for (pos, &key) in batch.ids.iter().enumerate() {
        let next = out.uniques.len();
        let u = *index.entry(key).or_insert(next);
        if u == next {
            out.uniques.push(key);
            out.first_positions.push(pos);
        }
        out.inverse.push(u);
    }
    out
}

/// Per-position results with slots expressed as global rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchOutput {
    pub results: Vec<ProbeResult>,
    pub dedup: DedupResult,
    /// One result per unique key, in dedup order.
    pub unique_results: Vec<ProbeResult>,
}

struct Planned {
    metas: Vec<u64>,
    /// Unique indices routed to each shard, in dedup order.
    groups: Vec<Vec<usize>>,
}

fn plan(
    index: &ShardedIndex,
    dedup: &DedupResult,
    now: u64,
    policy: &EvictionPolicy,
) -> Result<Planned> {
    let metas = dedup
        .uniques
        .iter()
        .zip(&dedup.first_positions)
        .map(|(&(_, feature), &pos)| policy.make_metadata(now, feature).map_err(|e| e.at(pos)))
        .collect::<Result<Vec<_>>>()?;
    let mut groups = vec![Vec::new(); index.layout().num_shards()];
    for (u, &(id, _)) in dedup.uniques.iter().enumerate() {
        groups[index.layout().shard_of(id)].push(u);
    }
    Ok(Planned { metas, groups })
}

fn run_shard(
    shard: &mut Shard,
    offset: usize,
    group: &[usize],
    dedup: &DedupResult,
    metas: &[u64],
    now: u64,
    policy: &EvictionPolicy,
) -> Result<Vec<(usize, ProbeResult)>> {
    group
        .iter()
        .map(|&u| {
            let (id, _) = dedup.uniques[u];
            shard
                .lookup_or_insert(id, metas[u], now, policy)
                .map(|r| {
                    (
                        u,
                        ProbeResult {
                            slot: offset + r.slot,
                            outcome: r.outcome,
                        },
                    )
                })
                .map_err(|e| e.at(dedup.first_positions[u]))
        })
        .collect()
}

fn assemble(
    dedup: DedupResult,
    per_shard: Vec<Result<Vec<(usize, ProbeResult)>>>,
) -> Result<BatchOutput> {
    let mut unique_results: Vec<Option<ProbeResult>> = vec![None; dedup.uniques.len()];
    let mut first_err: Option<Error> = None;
    for shard_result in per_shard {
        match shard_result {
            Ok(pairs) => {
                for (u, r) in pairs {
                    unique_results[u] = Some(r);
                }
            }
            Err(e) => {
                let pos = |e: &Error| match e {
                    Error::AtPosition { position, .. } => *position,
                    _ => usize::MAX,
                };
                if first_err.as_ref().is_none_or(|f| pos(&e) < pos(f)) {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    let unique_results: Vec<ProbeResult> = unique_results
        .into_iter()
        .map(|r| r.expect("every unique is routed to exactly one shard"))
        .collect();
    let results = dedup.inverse.iter().map(|&u| unique_results[u]).collect();
    Ok(BatchOutput {
        results,
        dedup,
        unique_results,
    })
}

/// Applies `batch` to `index`, one worker per shard.
pub fn process_batch(
    index: &mut ShardedIndex,
    batch: &IdBatch,
    policy: &EvictionPolicy,
) -> Result<BatchOutput> {
    let dedup = dedup(batch);
    let Planned { metas, groups } = plan(index, &dedup, batch.now, policy)?;
    let offsets = index.layout().shard_offsets().to_vec();
    let now = batch.now;
    let per_shard: Vec<_> = index
        .shards
        .par_iter_mut()
        .zip(groups.par_iter())
        .zip(offsets.par_iter())
        .map(|((shard, group), &offset)| {
            if group.is_empty() {
                Ok(Vec::new())
            } else {
                run_shard(shard, offset, group, &dedup, &metas, now, policy)
            }
        })
        .collect();
    assemble(dedup, per_shard)
}

/// Reference execution on the calling thread. Same contract as
/// [`process_batch`].
pub fn process_batch_sequential(
    index: &mut ShardedIndex,
    batch: &IdBatch,
    policy: &EvictionPolicy,
) -> Result<BatchOutput> {
    let dedup = dedup(batch);
    let Planned { metas, groups } = plan(index, &dedup, batch.now, policy)?;
    let offsets = index.layout().shard_offsets().to_vec();
    let per_shard = index
        .shards
        .iter_mut()
        .zip(&groups)
        .zip(&offsets)
        .map(|((shard, group), &offset)| {
            run_shard(shard, offset, group, &dedup, &metas, batch.now, policy)
        })
        .collect();
    assemble(dedup, per_shard)
}
