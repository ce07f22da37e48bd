//! Eviction policies: metadata construction, TTL expiry and LRU victim choice.
//!
//! Metadata is a caller-supplied timestamp in seconds. Under TTL the stored
//! value is the expiry time of the slot, under LRU it is the last access time.
//! Nothing here reads a wall clock.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::Id;

/// Feature ordinal carried next to each id in multi-feature tables.
pub type Feature = u32;

/// Time-to-live configuration with optional per-feature overrides.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtlPolicy {
    default_ttl: u64,
    per_feature_ttl: BTreeMap<Feature, u64>,
}

impl TtlPolicy {
    pub fn new(default_ttl: u64) -> Result<Self> {
        if default_ttl == 0 {
            return Err(Error::NonPositiveTtl);
        }
        Ok(Self {
            default_ttl,
            per_feature_ttl: BTreeMap::new(),
        })
    }

    pub fn with_feature_ttl(mut self, feature: Feature, ttl: u64) -> Result<Self> {
        if ttl == 0 {
            return Err(Error::NonPositiveTtl);
        }
        self.per_feature_ttl.insert(feature, ttl);
        Ok(self)
    }

    pub fn default_ttl(&self) -> u64 {
        self.default_ttl
    }

    /// Retention for `feature`, falling back to the default.
    pub fn ttl(&self, feature: Feature) -> u64 {
        self.per_feature_ttl
            .get(&feature)
            .copied()
            .unwrap_or(self.default_ttl)
    }
}

/// How occupied slots are reclaimed when a new id needs room.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvictionPolicy {
    /// Never evict. Identities are append-only.
    #[default]
    Disabled,
    /// Reclaim the first slot in the window whose expiry has passed.
    Ttl(TtlPolicy),
    /// Reclaim the least recently accessed slot in a full window.
    Lru,
}

impl EvictionPolicy {
    pub fn mode_name(&self) -> &'static str {
        match self {
            EvictionPolicy::Disabled => "disabled",
            EvictionPolicy::Ttl(_) => "ttl",
            EvictionPolicy::Lru => "lru",
        }
    }

    /// Metadata to store for an id touched at `now`.
    pub fn make_metadata(&self, now: u64, feature: Feature) -> Result<u64> {
        match self {
            EvictionPolicy::Ttl(ttl) => {
                let ttl = ttl.ttl(feature);
                now.checked_add(ttl)
                    .ok_or(Error::TimestampOverflow { now, ttl })
            }
            EvictionPolicy::Lru | EvictionPolicy::Disabled => Ok(now),
        }
    }

    /// Rejects metadata that `make_metadata` could not have produced at `now`.
    pub(crate) fn check_metadata(&self, meta: u64, now: u64) -> Result<()> {
        let ok = match self {
            EvictionPolicy::Ttl(_) => meta > now,
            EvictionPolicy::Lru | EvictionPolicy::Disabled => meta == now,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::MetadataMismatch {
                meta,
                now,
                mode: self.mode_name(),
            })
        }
    }
}

/// A TTL slot is expired once its stored expiry is strictly before `now`.
#[inline]
pub fn is_expired(stored: u64, now: u64) -> bool {
    stored < now
}

/// One occupied slot of a probe window, in probe order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowEntry {
    pub slot: usize,
    pub identity: Id,
    pub stamp: u64,
}

/// Picks the slot with the oldest access time; ties go to the lowest probe
/// offset, i.e. the earliest entry in `window`.
pub fn select_victim_lru(window: &[WindowEntry]) -> Result<usize> {
    window
        .iter()
        .enumerate()
        .min_by_key(|(offset, e)| (e.stamp, *offset))
        .map(|(_, e)| e.slot)
        .ok_or(Error::EmptyWindow)
}
