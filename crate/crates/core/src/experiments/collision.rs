use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_ids, Method, WorkloadSpec};
use crate::baseline::{baseline_assign, BaselineConfig};
use crate::batch::{process_batch, IdBatch};
use crate::error::Result;
use crate::eviction::EvictionPolicy;
use crate::shard::{ShardedIndex, TableLayout};

/// Id count of the default grid.
pub const GRID_NUM_IDS: usize = 150_000;
/// Table sizes of the default grid, 0.67x to 3.33x of [`GRID_NUM_IDS`].
pub const GRID_TABLE_SIZES: [usize; 9] = [
    100_000, 150_000, 200_000, 250_000, 300_000, 350_000, 400_000, 450_000, 500_000,
];
pub const GRID_PROBES: [usize; 7] = [8, 16, 32, 64, 128, 256, 512];

const CHUNK: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionRecord {
    pub table_size: usize,
    pub capacity_ratio: f64,
    /// Empty for the baseline, which does not probe.
    pub max_probe: Option<usize>,
    pub method: Method,
    /// `(num_ids - distinct_slots) / num_ids`.
    pub collision_rate: f64,
    pub distinct_slots: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub records: Vec<CollisionRecord>,
}

/// Expected baseline collision rate for `num_ids` uniform ids in
/// `table_size` rows: one minus the expected fraction of distinct rows.
pub fn analytic_baseline_rate(num_ids: usize, table_size: usize) -> f64 {
    let n = num_ids as f64;
    let m = table_size as f64;
    (n - m * (1.0 - (-n / m).exp())) / n
}

fn count_distinct(slots: impl Iterator<Item = usize>, rows: usize) -> usize {
    let mut hit = vec![false; rows];
    let mut distinct = 0;
    for s in slots {
        if !std::mem::replace(&mut hit[s], true) {
            distinct += 1;
        }
    }
    distinct
}

/// Feeds `num_ids` distinct ids once each through the chosen method. MPZCH
/// runs with eviction disabled regardless of `spec.policy`.
pub fn run_collision_experiment(spec: &WorkloadSpec) -> Result<CollisionRecord> {
    spec.validate()?;
    let ids = generate_ids(spec.num_ids, spec.seed);
    let (distinct_slots, max_probe) = match spec.method {
        Method::Baseline => {
            let cfg = BaselineConfig::new(spec.table_size, spec.seed)?;
            let slots = ids.iter().map(|&id| baseline_assign(id, &cfg));
            (count_distinct(slots, spec.table_size), None)
        }
        Method::Mpzch => {
            let layout = TableLayout::uniform(spec.table_size, spec.num_shards, spec.seed)?;
            let mut index = ShardedIndex::new(layout, spec.max_probe)?;
            let mut slots = Vec::with_capacity(ids.len());
            for chunk in ids.chunks(CHUNK) {
                let batch = IdBatch::new(chunk.iter().map(|&id| (id, 0)).collect(), 0);
                let out = process_batch(&mut index, &batch, &EvictionPolicy::Disabled)?;
                slots.extend(out.results.iter().map(|r| r.slot));
            }
            (
                count_distinct(slots.into_iter(), spec.table_size),
                Some(spec.max_probe),
            )
        }
    };
    Ok(CollisionRecord {
        table_size: spec.table_size,
        capacity_ratio: spec.table_size as f64 / spec.num_ids as f64,
        max_probe,
        method: spec.method,
        collision_rate: (spec.num_ids - distinct_slots) as f64 / spec.num_ids as f64,
        distinct_slots,
        seed: spec.seed,
    })
}

/// Runs every (table size, method, probe depth) cell. The baseline gets one
/// record per table size; configurations run in parallel.
pub fn run_collision_grid(
    base: &WorkloadSpec,
    table_sizes: &[usize],
    probes: &[usize],
    methods: &[Method],
) -> Result<CollisionReport> {
    let mut specs = Vec::new();
    for &table_size in table_sizes {
        for &method in methods {
            match method {
                Method::Baseline => specs.push(WorkloadSpec {
                    table_size,
                    method,
                    ..base.clone()
                }),
                Method::Mpzch => specs.extend(probes.iter().map(|&max_probe| WorkloadSpec {
                    table_size,
                    method,
                    max_probe,
                    ..base.clone()
                })),
            }
        }
    }
    let records = specs
        .par_iter()
        .map(run_collision_experiment)
        .collect::<Result<_>>()?;
    Ok(CollisionReport { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_rate_matches_known_points() {
        assert!((analytic_baseline_rate(1000, 1000) - (-1f64).exp()).abs() < 1e-12);
        // Ratio 0.67x: 1 - 1.5^-1 (1 - e^-1.5)
        assert!((analytic_baseline_rate(150, 100) - 0.482_086_773_432_286_6).abs() < 1e-12);
    }

    #[test]
    fn pigeonhole_floor_and_bounds() {
        for method in [Method::Baseline, Method::Mpzch] {
            let spec = WorkloadSpec {
                num_ids: 3000,
                table_size: 1000,
                max_probe: 64,
                method,
                ..Default::default()
            };
            let r = run_collision_experiment(&spec).unwrap();
            assert!(r.collision_rate >= 1.0 - 1000.0 / 3000.0 - 1e-12);
            assert!(r.collision_rate <= 1.0);
            assert!(r.distinct_slots <= 1000);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = WorkloadSpec {
            num_ids: 5000,
            table_size: 6000,
            max_probe: 8,
            num_shards: 3,
            seed: 11,
            ..Default::default()
        };
        assert_eq!(
            run_collision_experiment(&spec).unwrap(),
            run_collision_experiment(&spec).unwrap()
        );
    }

    #[test]
    fn grid_shape() {
        let base = WorkloadSpec {
            num_ids: 2000,
            ..Default::default()
        };
        let report = run_collision_grid(
            &base,
            &[2000, 4000],
            &[8, 16, 32],
            &[Method::Baseline, Method::Mpzch],
        )
        .unwrap();
        assert_eq!(report.records.len(), 2 * (1 + 3));
        assert_eq!(report.records[0].method, Method::Baseline);
        assert_eq!(report.records[0].max_probe, None);
    }
}
