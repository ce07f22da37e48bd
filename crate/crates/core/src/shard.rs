//! Row-wise sharding. Each shard owns a contiguous block of global rows and
//! the identity/metadata arrays for exactly those rows, so every probe stays
//! shard-local.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{mix64, SHARD_SALT};
use crate::probe::{Id, IdentityArray, ProbeResult, Shard, ShardConfig};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableLayout {
    shard_capacities: Vec<usize>,
    shard_offsets: Vec<usize>,
    seed: u64,
}

impl TableLayout {
    pub fn new(shard_capacities: Vec<usize>, seed: u64) -> Result<Self> {
        if shard_capacities.is_empty() {
            return Err(Error::InvalidLayout {
                reason: "at least one shard is required".into(),
            });
        }
        if shard_capacities.contains(&0) {
            return Err(Error::InvalidLayout {
                reason: "shard capacities must be positive".into(),
            });
        }
        let shard_offsets = shard_capacities
            .iter()
            .scan(0usize, |acc, &c| {
                let start = *acc;
                *acc += c;
                Some(start)
            })
            .collect();
        Ok(Self {
            shard_capacities,
            shard_offsets,
            seed,
        })
    }

    /// Splits `total_rows` into `num_shards` shards whose sizes differ by at
    /// most one row.
    pub fn uniform(total_rows: usize, num_shards: usize, seed: u64) -> Result<Self> {
        if num_shards == 0 || total_rows < num_shards {
            return Err(Error::InvalidLayout {
                reason: format!("cannot split {total_rows} rows into {num_shards} shards"),
            });
        }
        let base = total_rows / num_shards;
        let extra = total_rows % num_shards;
        let caps = (0..num_shards)
            .map(|s| base + usize::from(s < extra))
            .collect();
        Self::new(caps, seed)
    }

    pub fn num_shards(&self) -> usize {
        self.shard_capacities.len()
    }

    pub fn shard_capacities(&self) -> &[usize] {
        &self.shard_capacities
    }

    pub fn shard_offsets(&self) -> &[usize] {
        &self.shard_offsets
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn total_rows(&self) -> usize {
        self.shard_capacities.iter().sum()
    }

    #[inline]
    pub fn shard_of(&self, id: Id) -> usize {
        shard_of(id, self)
    }

    pub fn to_global(&self, shard: usize, local_slot: usize) -> Result<usize> {
        to_global(shard, local_slot, self)
    }

    /// Inverse of [`to_global`].
    pub fn from_global(&self, row: usize) -> Result<(usize, usize)> {
        let total = self.total_rows();
        if row >= total {
            return Err(Error::RowOutOfRange { row, rows: total });
        }
        let shard = self.shard_offsets.partition_point(|&off| off <= row) - 1;
        Ok((shard, row - self.shard_offsets[shard]))
    }
}

#[inline]
pub fn shard_of(id: Id, layout: &TableLayout) -> usize {
    (mix64(id.get() ^ SHARD_SALT, layout.seed) % layout.num_shards() as u64) as usize
}

pub fn to_global(shard: usize, local_slot: usize, layout: &TableLayout) -> Result<usize> {
    let capacity = *layout
        .shard_capacities
        .get(shard)
        .ok_or(Error::ShardOutOfRange {
            shard,
            num_shards: layout.num_shards(),
        })?;
    if local_slot >= capacity {
        return Err(Error::SlotOutOfRange {
            shard,
            slot: local_slot,
            capacity,
        });
    }
    Ok(layout.shard_offsets[shard] + local_slot)
}

/// All shards of one table plus the layout that routes ids to them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardedIndex {
    layout: TableLayout,
    max_probe: usize,
    pub(crate) shards: Vec<Shard>,
}

impl ShardedIndex {
    /// Every shard shares `max_probe` and the layout seed.
    pub fn new(layout: TableLayout, max_probe: usize) -> Result<Self> {
        let shards = layout
            .shard_capacities()
            .iter()
            .enumerate()
            .map(|(s, &cap)| ShardConfig::new(cap, max_probe, s, layout.seed()).map(Shard::new))
            .collect::<Result<_>>()?;
        Ok(Self {
            layout,
            max_probe,
            shards,
        })
    }

    pub fn layout(&self) -> &TableLayout {
        &self.layout
    }

    pub fn max_probe(&self) -> usize {
        self.max_probe
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn shard(&self, s: usize) -> &Shard {
        &self.shards[s]
    }

    /// Identity of the id owning global row `row`, if any.
    pub fn identity_at(&self, row: usize) -> Result<Option<Id>> {
        let (s, slot) = self.layout.from_global(row)?;
        Ok(self.shards[s].identities().get(slot))
    }

    pub fn identity_arrays(&self) -> impl Iterator<Item = &IdentityArray> {
        self.shards.iter().map(Shard::identities)
    }

    /// Read-only lookup with the slot expressed as a global row.
    pub fn lookup(&self, id: Id) -> ProbeResult {
        let s = self.layout.shard_of(id);
        let r = self.shards[s].lookup(id);
        ProbeResult {
            slot: self.layout.shard_offsets[s] + r.slot,
            outcome: r.outcome,
        }
    }
}
