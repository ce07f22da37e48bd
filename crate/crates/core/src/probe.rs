//! Single-shard multi-probe index.
//!
//! A shard owns an identity array (which id holds each slot) and a metadata
//! array (per-slot freshness). An id may only live in the `max_probe` slots
//! starting at its home slot, wrapping at the end of the shard. Lookups run in
//! two passes: the first only searches the window for the id, the second acts
//! on the result by refreshing, inserting, evicting or falling back to the
//! home slot.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eviction::{is_expired, select_victim_lru, EvictionPolicy, WindowEntry};
use crate::hash::{mix64, HOME_SALT};

/// Raw identity value marking a free slot (the all-ones pattern, i.e. -1).
pub const EMPTY: u64 = u64::MAX;

/// Largest id accepted. Ids live in the non-negative 63-bit range.
pub const MAX_ID: u64 = (1 << 63) - 1;

/// A non-negative 63-bit feature id. Never equal to [`EMPTY`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Id(u64);

impl Id {
    pub fn new(raw: u64) -> Result<Self> {
        if raw > MAX_ID {
            Err(Error::InvalidId { raw })
        } else {
            Ok(Id(raw))
        }
    }

    #[inline]
    pub fn get(self) -> u64 {
        self.0
    }
}

impl TryFrom<u64> for Id {
    type Error = Error;

    fn try_from(raw: u64) -> Result<Self> {
        Id::new(raw)
    }
}

impl From<Id> for u64 {
    fn from(id: Id) -> u64 {
        id.0
    }
}

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardConfig {
    capacity: usize,
    max_probe: usize,
    shard_id: usize,
    seed: u64,
}

impl ShardConfig {
    pub fn new(capacity: usize, max_probe: usize, shard_id: usize, seed: u64) -> Result<Self> {
        if capacity == 0 || max_probe == 0 || max_probe > capacity {
            return Err(Error::InvalidShardConfig {
                capacity,
                max_probe,
            });
        }
        Ok(Self {
            capacity,
            max_probe,
            shard_id,
            seed,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn max_probe(&self) -> usize {
        self.max_probe
    }

    pub fn shard_id(&self) -> usize {
        self.shard_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Which slot holds which id. Freshly built arrays are all [`EMPTY`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentityArray {
    entries: Vec<u64>,
}

impl IdentityArray {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: vec![EMPTY; capacity],
        }
    }

    /// Rebuilds an array from raw values, rejecting values that are neither
    /// valid ids nor the sentinel.
    pub fn from_raw(entries: Vec<u64>) -> Result<Self> {
        if let Some(&raw) = entries.iter().find(|&&e| e != EMPTY && e > MAX_ID) {
            return Err(Error::InvalidId { raw });
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, slot: usize) -> Option<Id> {
        match self.entries[slot] {
            EMPTY => None,
            raw => Some(Id(raw)),
        }
    }

    pub fn as_raw(&self) -> &[u64] {
        &self.entries
    }

    pub fn occupied(&self) -> usize {
        self.entries.iter().filter(|&&e| e != EMPTY).count()
    }

    pub(crate) fn set(&mut self, slot: usize, id: Option<Id>) {
        self.entries[slot] = id.map_or(EMPTY, Id::get);
    }
}

/// Per-slot timestamps: expiry under TTL, last access under LRU. Content is
/// meaningless where the paired identity is empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetadataArray {
    entries: Vec<u64>,
}

impl MetadataArray {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: vec![0; capacity],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, slot: usize) -> u64 {
        self.entries[slot]
    }

    pub fn as_raw(&self) -> &[u64] {
        &self.entries
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Found,
    Inserted,
    Evicted,
    Collision,
}

/// Where an id landed and how. For [`Outcome::Collision`] the slot is the
/// id's home slot, which is owned by another id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ProbeResult {
    pub slot: usize,
    pub outcome: Outcome,
}

impl ProbeResult {
    /// True when the slot previously belonged to another id and must be reset.
    #[inline]
    pub fn evicted(&self) -> bool {
        self.outcome == Outcome::Evicted
    }
}

#[inline]
pub fn home_slot(id: Id, cfg: &ShardConfig) -> usize {
    (mix64(id.get() ^ HOME_SALT, cfg.seed) % cfg.capacity as u64) as usize
}

/// Slot indices of the probe window, in probe order.
#[inline]
fn window(home: usize, cfg: &ShardConfig) -> impl Iterator<Item = usize> {
    let capacity = cfg.capacity;
    (0..cfg.max_probe).map(move |i| {
        let slot = home + i;
        if slot >= capacity {
            slot - capacity
        } else {
            slot
        }
    })
}

/// Searches the probe window without writing anything. Misses report the
/// home slot with [`Outcome::Collision`].
pub fn lookup_readonly(id: Id, identities: &IdentityArray, cfg: &ShardConfig) -> ProbeResult {
    let home = home_slot(id, cfg);
    match window(home, cfg).find(|&slot| identities.entries[slot] == id.get()) {
        Some(slot) => ProbeResult {
            slot,
            outcome: Outcome::Found,
        },
        None => ProbeResult {
            slot: home,
            outcome: Outcome::Collision,
        },
    }
}

/// Looks up `id`, allocating a slot for it if it is absent.
///
/// `meta_in` must come from [`EvictionPolicy::make_metadata`] at `now`.
/// When the id is already in the window its slot is returned and refreshed;
/// no other slot is touched. Otherwise the first empty slot is taken, or a
/// victim chosen by the policy, or, when neither exists, the home slot's
/// metadata is refreshed and the home slot is returned as a collision.
pub fn lookup_or_insert(
    id: Id,
    meta_in: u64,
    now: u64,
    identities: &mut IdentityArray,
    metadata: &mut MetadataArray,
    cfg: &ShardConfig,
    policy: &EvictionPolicy,
) -> Result<ProbeResult> {
    policy.check_metadata(meta_in, now)?;
    debug_assert_eq!(identities.len(), cfg.capacity);
    debug_assert_eq!(metadata.len(), cfg.capacity);

    let home = home_slot(id, cfg);
    let raw = id.get();

    // Pass 1: discovery only.
    if let Some(slot) = window(home, cfg).find(|&slot| identities.entries[slot] == raw) {
        metadata.entries[slot] = meta_in;
        return Ok(ProbeResult {
            slot,
            outcome: Outcome::Found,
        });
    }

    // Pass 2: the id is absent, so allocate.
    let claim = |identities: &mut IdentityArray, metadata: &mut MetadataArray, slot, outcome| {
        identities.entries[slot] = raw;
        metadata.entries[slot] = meta_in;
        ProbeResult { slot, outcome }
    };
    match policy {
        EvictionPolicy::Disabled => {
            if let Some(slot) = window(home, cfg).find(|&s| identities.entries[s] == EMPTY) {
                return Ok(claim(identities, metadata, slot, Outcome::Inserted));
            }
        }
        EvictionPolicy::Ttl(_) => {
            for slot in window(home, cfg) {
                if identities.entries[slot] == EMPTY {
                    return Ok(claim(identities, metadata, slot, Outcome::Inserted));
                }
                if is_expired(metadata.entries[slot], now) {
                    return Ok(claim(identities, metadata, slot, Outcome::Evicted));
                }
            }
        }
        EvictionPolicy::Lru => {
            if let Some(slot) = window(home, cfg).find(|&s| identities.entries[s] == EMPTY) {
                return Ok(claim(identities, metadata, slot, Outcome::Inserted));
            }
            let entries: Vec<WindowEntry> = window(home, cfg)
                .map(|slot| WindowEntry {
                    slot,
                    identity: Id(identities.entries[slot]),
                    stamp: metadata.entries[slot],
                })
                .collect();
            let slot = select_victim_lru(&entries)?;
            return Ok(claim(identities, metadata, slot, Outcome::Evicted));
        }
    }

    metadata.entries[home] = meta_in;
    Ok(ProbeResult {
        slot: home,
        outcome: Outcome::Collision,
    })
}

/// One shard's configuration plus its identity and metadata arrays.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shard {
    cfg: ShardConfig,
    identities: IdentityArray,
    metadata: MetadataArray,
}

impl Shard {
    pub fn new(cfg: ShardConfig) -> Self {
        Self {
            identities: IdentityArray::new(cfg.capacity),
            metadata: MetadataArray::new(cfg.capacity),
            cfg,
        }
    }

    pub fn config(&self) -> &ShardConfig {
        &self.cfg
    }

    pub fn identities(&self) -> &IdentityArray {
        &self.identities
    }

    pub fn metadata(&self) -> &MetadataArray {
        &self.metadata
    }

    pub fn lookup(&self, id: Id) -> ProbeResult {
        lookup_readonly(id, &self.identities, &self.cfg)
    }

    pub fn lookup_or_insert(
        &mut self,
        id: Id,
        meta_in: u64,
        now: u64,
        policy: &EvictionPolicy,
    ) -> Result<ProbeResult> {
        lookup_or_insert(
            id,
            meta_in,
            now,
            &mut self.identities,
            &mut self.metadata,
            &self.cfg,
            policy,
        )
    }
}
