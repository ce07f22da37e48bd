mod support;

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;

use mpzch::publish::{decode_snapshot, encode_snapshot, DeltaRecord};
use mpzch::{
    dirty_since, read_snapshot, DeltaLog, Error, EvictionPolicy, Id, IdBatch, ModelF32, Outcome,
    Publisher, Replica, RowInit, TableLayout, TtlPolicy,
};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::ref_mix;

fn model(rows: usize, shards: usize, dim: usize, policy: EvictionPolicy) -> ModelF32 {
    ModelF32::new(
        TableLayout::uniform(rows, shards, 11).unwrap(),
        4,
        dim,
        policy,
        RowInit::new(5),
    )
    .unwrap()
}

fn expected_draw(row: usize, init_seed: u64, dim: usize) -> Vec<f32> {
    let b = 1.0 / (dim as f32).sqrt();
    let dist = Uniform::new_inclusive(-b, b);
    let mut rng = ChaCha8Rng::seed_from_u64(ref_mix(row as u64, init_seed));
    (0..dim).map(|_| dist.sample(&mut rng)).collect()
}

#[test]
fn nothing_changed_means_no_records() {
    let mut m = model(64, 2, 4, EvictionPolicy::Lru);
    m.train_batch(&IdBatch::from_raw(&[1, 2, 3], 0).unwrap())
        .unwrap();
    let mark = m.mark();
    assert!(dirty_since(&m, mark).unwrap().is_empty());
    // Hits on existing ids do not dirty rows.
    m.train_batch(&IdBatch::from_raw(&[1, 2, 3], 1).unwrap())
        .unwrap();
    assert!(dirty_since(&m, mark).unwrap().is_empty());
}

#[test]
fn insert_and_step_give_one_record() {
    let mut m = model(64, 2, 4, EvictionPolicy::Lru);
    let mark = m.mark();
    let out = m
        .train_batch(&IdBatch::from_raw(&[42], 0).unwrap())
        .unwrap();
    let row = out.results[0].slot;
    m.sgd_step(&[row], &[0.5, -0.5, 0.25, 1.0], 0.1, 0.9)
        .unwrap();
    let recs = dirty_since(&m, mark).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].global_row, row);
    assert_eq!(recs[0].identity, Some(Id::new(42).unwrap()));
    assert_eq!(recs[0].weights, m.embeddings().row(row).unwrap());
    let init = expected_draw(row, 5, 4);
    let stepped: Vec<f32> = init
        .iter()
        .zip([0.5f32, -0.5, 0.25, 1.0])
        .map(|(w, g)| w - 0.1 * g)
        .collect();
    assert_eq!(recs[0].weights, stepped);
}

#[test]
fn eviction_record_carries_new_id_and_reset_draw() {
    let mut m = model(8, 1, 4, EvictionPolicy::Ttl(TtlPolicy::new(10).unwrap()));
    let first: Vec<u64> = (0..8).map(|i| 1000 + i).collect();
    let out = m
        .train_batch(&IdBatch::from_raw(&first, 0).unwrap())
        .unwrap();
    let rows: Vec<usize> = out.unique_results.iter().map(|r| r.slot).collect();
    m.sgd_step(&rows, &vec![1.0; rows.len() * 4], 0.1, 0.9)
        .unwrap();
    let mark = m.mark();
    let out = m
        .train_batch(&IdBatch::from_raw(&[77], 100).unwrap())
        .unwrap();
    let r = out.results[0];
    assert_eq!(r.outcome, Outcome::Evicted);
    let recs = dirty_since(&m, mark).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].global_row, r.slot);
    assert_eq!(recs[0].identity, Some(Id::new(77).unwrap()));
    assert_eq!(recs[0].weights, expected_draw(r.slot, 5, 4));
}

#[test]
fn marks_from_other_models_are_rejected() {
    let a = model(16, 1, 2, EvictionPolicy::Lru);
    let b = model(16, 1, 2, EvictionPolicy::Lru);
    assert!(matches!(dirty_since(&a, b.mark()), Err(Error::UnknownMark)));
}

#[test]
fn snapshot_size_has_no_metadata() {
    for (rows, shards, dim) in [(64, 1, 4), (1000, 8, 16), (37, 3, 1)] {
        let mut m = model(
            rows,
            shards,
            dim,
            EvictionPolicy::Ttl(TtlPolicy::new(50).unwrap()),
        );
        m.train_batch(&IdBatch::from_raw(&[5, 6, 7], 3).unwrap())
            .unwrap();
        let (bytes, _) = encode_snapshot(&m).unwrap();
        // magic, version, scalar width, dim, max_probe, shards, seed; capacities;
        // length-prefixed identities; length-prefixed rows; CRC.
        let header = 4 + 4 + 4 + 4 + 4 + 4 + 8 + 8 * shards;
        assert_eq!(bytes.len(), header + 8 + 8 * rows + 8 + 4 * dim * rows + 4);
    }
}

#[test]
fn metadata_does_not_reach_the_snapshot() {
    let policy = EvictionPolicy::Ttl(TtlPolicy::new(50).unwrap());
    let mut a = model(64, 2, 4, policy.clone());
    let mut b = model(64, 2, 4, policy);
    a.train_batch(&IdBatch::from_raw(&[5, 6, 7], 3).unwrap())
        .unwrap();
    b.train_batch(&IdBatch::from_raw(&[5, 6, 7], 3_000).unwrap())
        .unwrap();
    assert_eq!(encode_snapshot(&a).unwrap(), encode_snapshot(&b).unwrap());
}

#[test]
fn snapshot_roundtrip_and_frozen_contract() {
    let mut m = model(128, 4, 8, EvictionPolicy::Lru);
    let ids: Vec<u64> = (0..100).collect();
    let out = m.train_batch(&IdBatch::from_raw(&ids, 0).unwrap()).unwrap();
    let rows: Vec<usize> = out.unique_results.iter().map(|r| r.slot).collect();
    m.sgd_step(&rows, &vec![0.3; rows.len() * 8], 0.1, 0.0)
        .unwrap();
    let (bytes, _) = encode_snapshot(&m).unwrap();
    let mut frozen = decode_snapshot::<f32>(&bytes).unwrap();
    assert!(frozen
        .identity_arrays()
        .iter()
        .eq(m.index().identity_arrays()));
    assert!(frozen.weights().iter().map(|w| w.to_bits()).eq(m
        .embeddings()
        .weights()
        .iter()
        .map(|w| w.to_bits())));
    for &raw in &ids {
        let id = Id::new(raw).unwrap();
        assert_eq!(frozen.lookup(id), m.lookup(id));
    }
    assert!(matches!(
        frozen.lookup_or_insert(Id::new(1).unwrap(), 0),
        Err(Error::Frozen)
    ));
    assert!(matches!(frozen.reset_row(0), Err(Error::Frozen)));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_snapshot::<f32>(&bad).is_err());
    assert!(decode_snapshot::<f32>(&bytes[..bytes.len() - 1]).is_err());
    assert!(decode_snapshot::<f64>(&bytes).is_err());
}

#[test]
fn replica_follows_the_chain_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = model(256, 4, 4, EvictionPolicy::Ttl(TtlPolicy::new(120).unwrap()));
    let mut publisher = Publisher::snapshot(&m, dir.path().join("s.mpzc")).unwrap();
    let replica = Replica::new(read_snapshot::<f32>(dir.path().join("s.mpzc")).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut evictions = 0;
    for step in 0..40u64 {
        let raw: Vec<u64> = (0..64).map(|_| rng.gen_range(0..2_000)).collect();
        let out = m
            .train_batch(&IdBatch::from_raw(&raw, step * 30).unwrap())
            .unwrap();
        evictions += out.unique_results.iter().filter(|r| r.evicted()).count();
        let rows: Vec<usize> = out.unique_results.iter().map(|r| r.slot).collect();
        let grads: Vec<f32> = (0..rows.len() * 4)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        m.sgd_step(&rows, &grads, 0.05, 0.9).unwrap();
        if step % 4 == 3 {
            let log = publisher.cut(&m).unwrap();
            let path = dir.path().join(format!("d{}.mpzd", log.sequence));
            log.write(&path).unwrap();
            replica
                .apply_delta(&DeltaLog::read(&path).unwrap())
                .unwrap();
        }
    }
    assert!(evictions > 0);
    let frozen = replica.into_inner();
    assert!(frozen
        .identity_arrays()
        .iter()
        .eq(m.index().identity_arrays()));
    assert!(frozen.weights().iter().map(|w| w.to_bits()).eq(m
        .embeddings()
        .weights()
        .iter()
        .map(|w| w.to_bits())));
    for row in 0..frozen.layout().total_rows() {
        if let Some(id) = frozen.identity_at(row).unwrap() {
            assert_eq!(frozen.lookup(id).slot, row);
        }
    }
}

#[test]
fn readers_never_see_torn_rows() {
    let dim = 16;
    let dir = tempfile::tempdir().unwrap();
    let mut src = model(64, 1, dim, EvictionPolicy::Lru);
    let publisher = Publisher::snapshot(&src, dir.path().join("s.mpzc")).unwrap();
    let out = src
        .train_batch(&IdBatch::from_raw(&(0..40).collect::<Vec<_>>(), 0).unwrap())
        .unwrap();
    let placed: Vec<(Id, usize)> = out
        .dedup
        .uniques
        .iter()
        .map(|(id, _)| *id)
        .zip(out.unique_results.iter().map(|r| r.slot))
        .collect();

    let replica = Arc::new(Replica::new(
        read_snapshot::<f32>(dir.path().join("s.mpzc")).unwrap(),
    ));
    let done = Arc::new(AtomicBool::new(false));
    let seen = Arc::new(AtomicU64::new(0));
    let readers: Vec<_> = (0..4)
        .map(|t| {
            let replica = Arc::clone(&replica);
            let done = Arc::clone(&done);
            let seen = Arc::clone(&seen);
            let placed = placed.clone();
            thread::spawn(move || {
                let mut checked = 0u64;
                let mut i = t;
                while !done.load(Ordering::Acquire) {
                    let (id, _) = placed[i % placed.len()];
                    let (r, row) = replica.lookup_row(id);
                    if r.outcome == Outcome::Found {
                        // Present rows carry a positive tag in every lane.
                        assert!(row.iter().all(|&w| w == row[0] && w > 0.0), "{row:?}");
                        checked += 1;
                        seen.fetch_add(1, Ordering::Relaxed);
                    }
                    i += 1;
                }
                checked
            })
        })
        .collect();

    let mut seq = 0u64;
    while seq < 300 || (seen.load(Ordering::Relaxed) < 10_000 && seq < 1_000_000) {
        seq += 1;
        let present = seq % 2 == 1;
        let records = placed
            .iter()
            .map(|&(id, row)| DeltaRecord {
                global_row: row,
                identity: present.then_some(id),
                weights: vec![if present { seq as f32 } else { -(seq as f32) }; dim],
            })
            .collect();
        let log = DeltaLog {
            base_checksum: publisher.base_checksum(),
            sequence: seq,
            dim,
            records,
        };
        replica.apply_delta(&log).unwrap();
    }
    done.store(true, Ordering::Release);
    let checked: u64 = readers.into_iter().map(|h| h.join().unwrap()).sum();
    assert!(checked > 0);
}

#[test]
fn skipped_logs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = model(32, 1, 2, EvictionPolicy::Lru);
    let mut publisher = Publisher::snapshot(&m, dir.path().join("s.mpzc")).unwrap();
    let replica = Replica::new(read_snapshot::<f32>(dir.path().join("s.mpzc")).unwrap());
    m.train_batch(&IdBatch::from_raw(&[1], 0).unwrap()).unwrap();
    let _first = publisher.cut(&m).unwrap();
    m.train_batch(&IdBatch::from_raw(&[2], 1).unwrap()).unwrap();
    let second = publisher.cut(&m).unwrap();
    assert!(matches!(
        replica.apply_delta(&second),
        Err(Error::OutOfOrder {
            expected: 1,
            found: 2
        })
    ));
    replica.read(|f| assert_eq!(f.identity_arrays()[0].occupied(), 0));
}
