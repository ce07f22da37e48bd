//! Desk-scale experiments: collision rates, churn and freshness, and
//! throughput. Everything is deterministic given the workload seed, except
//! wall-clock timings.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eviction::EvictionPolicy;
use crate::probe::Id;

mod churn;
mod collision;
mod latency;
mod report;
mod roundtrip;

pub use churn::{run_churn_simulation, FreshnessReport};
pub use collision::{
    analytic_baseline_rate, run_collision_experiment, run_collision_grid, CollisionRecord,
    CollisionReport, GRID_NUM_IDS, GRID_PROBES, GRID_TABLE_SIZES,
};
pub use latency::{run_latency_bench, LatencyMode, LatencyRecord, LatencyReport};
pub use report::{emit_report, load_report, write_report, CsvSchema, ReportFormat};
pub use roundtrip::{run_publish_roundtrip, PublishReport};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "ZCH_THREADS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    #[default]
    Mpzch,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Baseline => "baseline",
            Method::Mpzch => "mpzch",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Method::Baseline),
            "mpzch" => Ok(Method::Mpzch),
            other => Err(Error::InvalidSpec(format!("unknown method {other:?}"))),
        }
    }
}

/// Arrival and reappearance pattern for churn simulations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChurnParams {
    pub steps: usize,
    /// Never-seen ids arriving per step.
    pub new_ids_per_step: usize,
    /// Previously seen ids reappearing per step.
    pub revisits_per_step: usize,
    /// Revisits are drawn uniformly from this many most recent arrivals.
    pub revisit_window: usize,
    pub step_seconds: u64,
    pub dim: usize,
    pub lr: f32,
    pub beta: f32,
}

impl Default for ChurnParams {
    fn default() -> Self {
        Self {
            steps: 100,
            new_ids_per_step: 400,
            revisits_per_step: 400,
            revisit_window: 4000,
            step_seconds: 60,
            dim: 8,
            lr: 0.05,
            beta: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub num_ids: usize,
    pub table_size: usize,
    pub max_probe: usize,
    pub method: Method,
    pub policy: EvictionPolicy,
    pub num_shards: usize,
    pub seed: u64,
    pub churn: ChurnParams,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            num_ids: GRID_NUM_IDS,
            table_size: GRID_NUM_IDS,
            max_probe: 64,
            method: Method::Mpzch,
            policy: EvictionPolicy::Disabled,
            num_shards: 1,
            seed: 0,
            churn: ChurnParams::default(),
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.num_ids == 0 {
            return bad("num_ids must be at least 1".into());
        }
        if self.table_size == 0 {
            return bad("table_size must be at least 1".into());
        }
        if self.method == Method::Mpzch {
            if self.num_shards == 0 || self.num_shards > self.table_size {
                return bad(format!(
                    "cannot split {} rows into {} shards",
                    self.table_size, self.num_shards
                ));
            }
            let smallest = self.table_size / self.num_shards;
            if self.max_probe == 0 || self.max_probe > smallest {
                return bad(format!(
                    "max_probe {} must lie in [1, {smallest}] (smallest shard)",
                    self.max_probe
                ));
            }
        }
        Ok(())
    }
}

/// `n` distinct 63-bit ids from a seeded generator.
pub fn generate_ids(n: usize, seed: u64) -> Vec<Id> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let raw = rng.gen::<u64>() >> 1;
        if seen.insert(raw) {
            out.push(Id::new(raw).expect("63-bit draw"));
        }
    }
    out
}

/// Caps the global worker pool at `ZCH_THREADS` when set. Returns the cap.
pub fn configure_threads_from_env() -> Result<Option<usize>> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| {
            Error::InvalidSpec(format!("{THREADS_ENV}={value:?} is not a positive integer"))
        })?;
    // Fails only if a pool already exists, in which case that pool is kept.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(Some(threads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_ids_are_distinct_and_seeded() {
        let a = generate_ids(10_000, 3);
        let set: HashSet<_> = a.iter().collect();
        assert_eq!(set.len(), 10_000);
        assert_eq!(a, generate_ids(10_000, 3));
        assert_ne!(a, generate_ids(10_000, 4));
    }

    #[test]
    fn spec_validation() {
        assert!(WorkloadSpec::default().validate().is_ok());
        let spec = WorkloadSpec {
            num_ids: 0,
            ..Default::default()
        };
        assert!(spec.validate().is_err());
        let spec = WorkloadSpec {
            table_size: 0,
            ..Default::default()
        };
        assert!(spec.validate().is_err());
        let spec = WorkloadSpec {
            table_size: 100,
            max_probe: 101,
            ..Default::default()
        };
        assert!(spec.validate().is_err());
        let spec = WorkloadSpec {
            table_size: 100,
            max_probe: 101,
            method: Method::Baseline,
            ..Default::default()
        };
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("mpzch".parse::<Method>().unwrap(), Method::Mpzch);
        assert_eq!(Method::Baseline.to_string(), "baseline");
        assert!("modulo".parse::<Method>().is_err());
    }
}
