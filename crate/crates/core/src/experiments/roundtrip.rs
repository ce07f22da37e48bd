use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_ids, WorkloadSpec};
use crate::batch::IdBatch;
use crate::embedding::RowInit;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::publish::{read_snapshot, snapshot_len, DeltaLog, Publisher, Replica};
use crate::shard::TableLayout;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublishReport {
    pub batches: usize,
    pub cuts: usize,
    pub rows: usize,
    pub occupied_rows: usize,
    pub snapshot_bytes: u64,
    pub expected_snapshot_bytes: u64,
    pub delta_records: u64,
    /// Replica identities and weights equal the source bit for bit.
    pub bit_equal: bool,
    /// Occupied replica rows whose id does not look up to that row.
    pub consistency_violations: u64,
}

impl PublishReport {
    pub fn ok(&self) -> bool {
        self.bit_equal
            && self.consistency_violations == 0
            && self.snapshot_bytes == self.expected_snapshot_bytes
    }
}

/// Trains a model for `batches` steps, publishing a snapshot up front and a
/// delta every `batches / cuts` steps, and replays everything into a replica
/// from the files written under `dir`.
pub fn run_publish_roundtrip(
    spec: &WorkloadSpec,
    batch_size: usize,
    batches: usize,
    cuts: usize,
    dir: &Path,
) -> Result<PublishReport> {
    spec.validate()?;
    if cuts == 0 || batches == 0 || !batches.is_multiple_of(cuts) || batch_size == 0 {
        return Err(Error::InvalidSpec(
            "batches and batch_size must be positive and batches a multiple of cuts".into(),
        ));
    }
    let churn = &spec.churn;
    fs::create_dir_all(dir)?;
    let layout = TableLayout::uniform(spec.table_size, spec.num_shards, spec.seed)?;
    let mut model: Model<f32> = Model::new(
        layout,
        spec.max_probe,
        churn.dim,
        spec.policy.clone(),
        RowInit::new(spec.seed),
    )?;
    let pool = generate_ids(spec.num_ids, spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7075_626c);

    let snapshot_path = dir.join("snapshot.mpzc");
    let mut publisher = Publisher::snapshot(&model, &snapshot_path)?;
    let snapshot_bytes = fs::metadata(&snapshot_path)?.len();
    let replica = Replica::new(read_snapshot::<f32>(&snapshot_path)?);

    let every = batches / cuts;
    let mut delta_records = 0u64;
    for b in 0..batches {
        let ids = (0..batch_size)
            .map(|_| (pool[rng.gen_range(0..pool.len())], 0))
            .collect();
        let out = model.train_batch(&IdBatch::new(ids, b as u64 * churn.step_seconds))?;
        let rows: Vec<usize> = out.unique_results.iter().map(|r| r.slot).collect();
        let grads: Vec<f32> = (0..rows.len() * churn.dim)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();
        model.sgd_step(&rows, &grads, churn.lr, churn.beta)?;
        if (b + 1) % every == 0 {
            let log = publisher.cut(&model)?;
            let path = dir.join(format!("delta-{:06}.mpzd", log.sequence));
            log.write(&path)?;
            let log = DeltaLog::<f32>::read(&path)?;
            delta_records += log.records.len() as u64;
            replica.apply_delta(&log)?;
        }
    }

    let frozen = replica.into_inner();
    let ids_equal = frozen
        .identity_arrays()
        .iter()
        .zip(model.index().identity_arrays())
        .all(|(a, b)| a == b);
    let weights_equal = frozen.weights().len() == model.embeddings().weights().len()
        && frozen
            .weights()
            .iter()
            .zip(model.embeddings().weights())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    let mut occupied_rows = 0;
    let mut consistency_violations = 0;
    for row in 0..frozen.layout().total_rows() {
        if let Some(id) = frozen.identity_at(row)? {
            occupied_rows += 1;
            if frozen.lookup(id).slot != row {
                consistency_violations += 1;
            }
        }
    }
    let rows = frozen.layout().total_rows();
    Ok(PublishReport {
        batches,
        cuts,
        rows,
        occupied_rows,
        snapshot_bytes,
        expected_snapshot_bytes: snapshot_len(spec.num_shards, rows, churn.dim, 4) as u64,
        delta_records,
        bit_equal: ids_equal && weights_equal,
        consistency_violations,
    })
}
