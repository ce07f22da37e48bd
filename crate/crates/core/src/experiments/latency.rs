use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_ids, WorkloadSpec};
use crate::batch::{process_batch, IdBatch};
use crate::error::{Error, Result};
use crate::probe::Outcome;
use crate::shard::{ShardedIndex, TableLayout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyMode {
    /// One call per batch.
    Batched,
    /// One call per id.
    PerId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub max_probe: usize,
    pub mode: LatencyMode,
    pub batch_size: usize,
    pub repetitions: usize,
    pub calls: u64,
    pub lookups: u64,
    pub found: u64,
    pub inserted: u64,
    pub evicted: u64,
    pub collision: u64,
    pub total_seconds: f64,
    pub ms_per_batch: f64,
    pub ids_per_second: f64,
}

impl LatencyRecord {
    /// Everything except the timings.
    pub fn work(&self) -> (usize, LatencyMode, u64, u64, [u64; 4]) {
        (
            self.max_probe,
            self.mode,
            self.calls,
            self.lookups,
            [self.found, self.inserted, self.evicted, self.collision],
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub records: Vec<LatencyRecord>,
}

#[derive(Default)]
struct Tally {
    calls: u64,
    lookups: u64,
    outcomes: [u64; 4],
}

impl Tally {
    fn add(&mut self, outcomes: impl Iterator<Item = Outcome>) {
        self.calls += 1;
        for o in outcomes {
            self.lookups += 1;
            self.outcomes[match o {
                Outcome::Found => 0,
                Outcome::Inserted => 1,
                Outcome::Evicted => 2,
                Outcome::Collision => 3,
            }] += 1;
        }
    }
}

/// Times the index in batched and per-id mode for each probe depth.
///
/// Each repetition draws `batch_size` ids (with repeats) from a pool of
/// `spec.num_ids` ids and advances the clock by one minute. Both modes start
/// from the same empty index and see the same id sequence.
pub fn run_latency_bench(
    spec: &WorkloadSpec,
    probes: &[usize],
    batch_size: usize,
    repetitions: usize,
) -> Result<LatencyReport> {
    if batch_size == 0 || repetitions == 0 {
        return Err(Error::InvalidSpec(
            "batch_size and repetitions must be positive".into(),
        ));
    }
    let pool = generate_ids(spec.num_ids, spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6265_6e63);
    let batches: Vec<IdBatch> = (0..repetitions)
        .map(|rep| {
            let ids = (0..batch_size)
                .map(|_| (pool[rng.gen_range(0..pool.len())], 0))
                .collect();
            IdBatch::new(ids, rep as u64 * 60)
        })
        .collect();

    let mut records = Vec::with_capacity(2 * probes.len());
    for &max_probe in probes {
        let probe_spec = WorkloadSpec {
            max_probe,
            ..spec.clone()
        };
        probe_spec.validate()?;
        let layout = TableLayout::uniform(spec.table_size, spec.num_shards, spec.seed)?;
        let fresh = ShardedIndex::new(layout, max_probe)?;

        let mut index = fresh.clone();
        let mut tally = Tally::default();
        let start = Instant::now();
        for batch in &batches {
            let out = process_batch(&mut index, batch, &spec.policy)?;
            tally.add(out.unique_results.iter().map(|r| r.outcome));
        }
        records.push(record(
            max_probe,
            LatencyMode::Batched,
            batch_size,
            repetitions,
            tally,
            start,
        ));

        let mut index = fresh;
        let mut tally = Tally::default();
        let start = Instant::now();
        for batch in &batches {
            for &key in &batch.ids {
                let single = IdBatch::new(vec![key], batch.now);
                let out = process_batch(&mut index, &single, &spec.policy)?;
                tally.add(out.results.iter().map(|r| r.outcome));
            }
        }
        records.push(record(
            max_probe,
            LatencyMode::PerId,
            batch_size,
            repetitions,
            tally,
            start,
        ));
    }
    Ok(LatencyReport { records })
}

fn record(
    max_probe: usize,
    mode: LatencyMode,
    batch_size: usize,
    repetitions: usize,
    tally: Tally,
    start: Instant,
) -> LatencyRecord {
    let total_seconds = start.elapsed().as_secs_f64();
    let ids = (batch_size * repetitions) as f64;
    LatencyRecord {
        max_probe,
        mode,
        batch_size,
        repetitions,
        calls: tally.calls,
        lookups: tally.lookups,
        found: tally.outcomes[0],
        inserted: tally.outcomes[1],
        evicted: tally.outcomes[2],
        collision: tally.outcomes[3],
        total_seconds,
        ms_per_batch: total_seconds * 1e3 / repetitions as f64,
        ids_per_second: ids / total_seconds.max(f64::MIN_POSITIVE),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eviction::EvictionPolicy;

    fn spec() -> WorkloadSpec {
        WorkloadSpec {
            num_ids: 3000,
            table_size: 4096,
            num_shards: 2,
            policy: EvictionPolicy::Lru,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn one_row_per_probe_and_mode() {
        let r = run_latency_bench(&spec(), &[8, 16, 32], 256, 4).unwrap();
        assert_eq!(r.records.len(), 6);
        for (i, p) in [8, 16, 32].into_iter().enumerate() {
            assert_eq!(r.records[2 * i].max_probe, p);
            assert_eq!(r.records[2 * i].mode, LatencyMode::Batched);
            assert_eq!(r.records[2 * i + 1].mode, LatencyMode::PerId);
            assert_eq!(r.records[2 * i + 1].lookups, 256 * 4);
        }
    }

    #[test]
    fn work_is_deterministic() {
        let a = run_latency_bench(&spec(), &[16], 128, 3).unwrap();
        let b = run_latency_bench(&spec(), &[16], 128, 3).unwrap();
        let work = |r: &LatencyReport| {
            r.records
                .iter()
                .map(LatencyRecord::work)
                .collect::<Vec<_>>()
        };
        assert_eq!(work(&a), work(&b));
    }

    #[test]
    fn rejects_degenerate_runs() {
        assert!(run_latency_bench(&spec(), &[8], 0, 1).is_err());
        assert!(run_latency_bench(&spec(), &[8], 1, 0).is_err());
        assert!(run_latency_bench(&spec(), &[4096], 8, 1).is_err());
    }
}
