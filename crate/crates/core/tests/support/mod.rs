//! Naive reference shard and workload generators shared by the integration
//! tests. Written straight from the pseudocode: signed identities with -1 as
//! the free marker, its own hash, and no calls into the library's probing.
#![allow(dead_code)]

use std::collections::BTreeMap;

use mpzch::{EvictionPolicy, Id, Outcome, ProbeResult, Shard, ShardConfig, TtlPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FREE: i64 = -1;

pub fn ref_mix(id: u64, seed: u64) -> u64 {
    let a = id ^ seed;
    let b = a ^ (a >> 33);
    let c = b.wrapping_mul(0xff51afd7ed558ccd);
    let d = c ^ (c >> 33);
    let e = d.wrapping_mul(0xc4ceb9fe1a85ec53);
    e ^ (e >> 33)
}

#[derive(Clone, Debug, PartialEq)]
pub enum RefPolicy {
    Disabled,
    Ttl {
        default: u64,
        per_feature: BTreeMap<u32, u64>,
    },
    Lru,
}

impl RefPolicy {
    pub fn meta(&self, now: u64, feature: u32) -> u64 {
        match self {
            RefPolicy::Ttl {
                default,
                per_feature,
            } => now + per_feature.get(&feature).copied().unwrap_or(*default),
            _ => now,
        }
    }

    pub fn to_lib(&self) -> EvictionPolicy {
        match self {
            RefPolicy::Disabled => EvictionPolicy::Disabled,
            RefPolicy::Lru => EvictionPolicy::Lru,
            RefPolicy::Ttl {
                default,
                per_feature,
            } => {
                let mut p = TtlPolicy::new(*default).unwrap();
                for (&f, &t) in per_feature {
                    p = p.with_feature_ttl(f, t).unwrap();
                }
                EvictionPolicy::Ttl(p)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefOutcome {
    Found,
    Inserted,
    Evicted,
    Collision,
}

#[derive(Clone, Debug)]
pub struct RefShard {
    pub ids: Vec<i64>,
    pub meta: Vec<u64>,
    pub max_probe: usize,
    pub seed: u64,
}

impl RefShard {
    pub fn new(capacity: usize, max_probe: usize, seed: u64) -> Self {
        Self {
            ids: vec![FREE; capacity],
            meta: vec![0; capacity],
            max_probe,
            seed,
        }
    }

    pub fn home(&self, id: i64) -> usize {
        (ref_mix(id as u64 ^ 0x9E3779B97F4A7C15, self.seed) % self.ids.len() as u64) as usize
    }

    /// One call of the single-id kernel. Returns (slot, evicted, outcome).
    pub fn step(
        &mut self,
        id: i64,
        meta: u64,
        now: u64,
        policy: &RefPolicy,
    ) -> (usize, bool, RefOutcome) {
        let c = self.ids.len();
        let h = self.home(id);

        // Pass 1
        let mut exists = false;
        for i in 0..self.max_probe {
            let slot = (h + i) % c;
            if self.ids[slot] == id {
                exists = true;
                break;
            }
        }

        // Pass 2
        for i in 0..self.max_probe {
            let slot = (h + i) % c;
            if self.ids[slot] == id {
                self.meta[slot] = meta;
                return (slot, false, RefOutcome::Found);
            }
            if self.ids[slot] == FREE {
                self.ids[slot] = id;
                self.meta[slot] = meta;
                return (slot, false, RefOutcome::Inserted);
            }
            if !exists {
                if let RefPolicy::Ttl { .. } = policy {
                    if self.meta[slot] < now {
                        self.ids[slot] = id;
                        self.meta[slot] = meta;
                        return (slot, true, RefOutcome::Evicted);
                    }
                }
            }
        }

        if !exists && *policy == RefPolicy::Lru {
            let mut best = h % c;
            for i in 1..self.max_probe {
                let slot = (h + i) % c;
                if self.meta[slot] < self.meta[best] {
                    best = slot;
                }
            }
            self.ids[best] = id;
            self.meta[best] = meta;
            return (best, true, RefOutcome::Evicted);
        }

        self.meta[h] = meta;
        (h, false, RefOutcome::Collision)
    }

    pub fn raw_ids(&self) -> Vec<u64> {
        self.ids.iter().map(|&x| x as u64).collect()
    }
}

pub fn same_result(lib: &ProbeResult, reference: (usize, bool, RefOutcome)) -> bool {
    let outcome = match lib.outcome {
        Outcome::Found => RefOutcome::Found,
        Outcome::Inserted => RefOutcome::Inserted,
        Outcome::Evicted => RefOutcome::Evicted,
        Outcome::Collision => RefOutcome::Collision,
    };
    lib.slot == reference.0 && lib.evicted() == reference.1 && outcome == reference.2
}

#[derive(Clone, Debug)]
pub struct Op {
    pub id: u64,
    pub feature: u32,
    pub now: u64,
}

#[derive(Clone, Debug)]
pub struct Workload {
    pub capacity: usize,
    pub max_probe: usize,
    pub seed: u64,
    pub policy: RefPolicy,
    pub ops: Vec<Op>,
}

/// Small shard, small id pool so windows fill up and ids recur.
pub fn random_workload(rng: &mut impl Rng) -> Workload {
    let capacity = rng.gen_range(1..=64);
    let max_probe = rng.gen_range(1..=capacity.min(8));
    let policy = match rng.gen_range(0..3) {
        0 => RefPolicy::Disabled,
        1 => RefPolicy::Lru,
        _ => {
            let mut per_feature = BTreeMap::new();
            for f in 0..rng.gen_range(0..3u32) {
                per_feature.insert(f, rng.gen_range(1..40));
            }
            RefPolicy::Ttl {
                default: rng.gen_range(1..40),
                per_feature,
            }
        }
    };
    let pool: Vec<u64> = (0..rng.gen_range(1..=2 * capacity + 4))
        .map(|_| rng.gen::<u64>() >> 1)
        .collect();
    let mut now = rng.gen_range(0..1000u64);
    let ops = (0..rng.gen_range(1..200))
        .map(|_| {
            now += rng.gen_range(0..6);
            Op {
                id: pool[rng.gen_range(0..pool.len())],
                feature: rng.gen_range(0..3),
                now,
            }
        })
        .collect();
    Workload {
        capacity,
        max_probe,
        seed: rng.gen(),
        policy,
        ops,
    }
}

pub fn workload_from_seed(seed: u64) -> Workload {
    random_workload(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// An id inserted late in a full window whose earlier slots hold entries
/// with a short lifetime; the last op revisits it after those expire.
pub fn adversarial_workload(rng: &mut impl Rng) -> (Workload, u64) {
    let capacity = rng.gen_range(4..=64);
    let max_probe = rng.gen_range(2..=capacity.min(8));
    let seed = rng.gen();
    let probe = RefShard::new(capacity, max_probe, seed);
    let target = rng.gen::<u64>() >> 1;
    let home = probe.home(target as i64);
    let ahead = rng.gen_range(1..max_probe);

    // Foreign ids whose home is the target's home fill the first `ahead` slots.
    let mut foreign = Vec::new();
    while foreign.len() < ahead {
        let id = rng.gen::<u64>() >> 1;
        if id != target && probe.home(id as i64) == home {
            foreign.push(id);
        }
    }
    let mut per_feature = BTreeMap::new();
    per_feature.insert(1, 1_000);
    let policy = RefPolicy::Ttl {
        default: 5,
        per_feature,
    };
    let mut ops: Vec<Op> = foreign
        .iter()
        .map(|&id| Op {
            id,
            feature: 0,
            now: 100,
        })
        .collect();
    ops.push(Op {
        id: target,
        feature: 1,
        now: 100,
    });
    ops.push(Op {
        id: target,
        feature: 1,
        now: 100 + rng.gen_range(6..500),
    });
    (
        Workload {
            capacity,
            max_probe,
            seed,
            policy,
            ops,
        },
        target,
    )
}

pub struct Replay {
    pub mismatches: usize,
    pub duplicates: usize,
    pub results: Vec<ProbeResult>,
    pub shard: Shard,
    pub reference: RefShard,
}

pub fn has_duplicates(raw: &[u64]) -> bool {
    let mut seen: Vec<u64> = raw.iter().copied().filter(|&x| x != u64::MAX).collect();
    let n = seen.len();
    seen.sort_unstable();
    seen.dedup();
    seen.len() != n
}

/// Runs the workload through the library and the reference side by side.
pub fn replay(w: &Workload) -> Replay {
    let cfg = ShardConfig::new(w.capacity, w.max_probe, 0, w.seed).unwrap();
    let mut shard = Shard::new(cfg);
    let mut reference = RefShard::new(w.capacity, w.max_probe, w.seed);
    let policy = w.policy.to_lib();
    let mut mismatches = 0;
    let mut duplicates = 0;
    let mut results = Vec::with_capacity(w.ops.len());
    for op in &w.ops {
        let meta = w.policy.meta(op.now, op.feature);
        let got = shard
            .lookup_or_insert(Id::new(op.id).unwrap(), meta, op.now, &policy)
            .unwrap();
        let want = reference.step(op.id as i64, meta, op.now, &w.policy);
        if !same_result(&got, want) {
            mismatches += 1;
        }
        if has_duplicates(shard.identities().as_raw()) {
            duplicates += 1;
        }
        results.push(got);
    }
    if shard.identities().as_raw() != reference.raw_ids().as_slice()
        || shard
            .metadata()
            .as_raw()
            .iter()
            .zip(&reference.meta)
            .zip(&reference.ids)
            .any(|((a, b), &i)| i != FREE && a != b)
    {
        mismatches += 1;
    }
    Replay {
        mismatches,
        duplicates,
        results,
        shard,
        reference,
    }
}
