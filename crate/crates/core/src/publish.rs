//! Snapshot and delta publishing for read-only inference replicas.
//!
//! A snapshot (`.mpzc`) carries the layout, the identity arrays and the
//! embedding rows. Metadata and optimizer state are never written. A delta
//! log (`.mpzd`) carries whole rows, identity and weights together, for every
//! row that changed since the previous cut.
//!
//! Both formats are little-endian, use 64-bit byte-length prefixes for their
//! variable sections, and end with a CRC-32 (IEEE) of all preceding bytes.
//!
//! Snapshot layout:
//!
//! ```text
//! "MPZC" | version u32 | scalar bytes u32 | dim u32 | max_probe u32
//!        | num_shards u32 | seed u64 | capacity u64 * num_shards
//!        | len u64 | identity u64 * rows
//!        | len u64 | weight * (rows * dim)
//!        | crc32 u32
//! ```
//!
//! Delta layout:
//!
//! ```text
//! "MPZD" | version u32 | scalar bytes u32 | dim u32 | base crc32 u32
//!        | sequence u64
//!        | len u64 | (row u64 | identity u64 | weight * dim) * records
//!        | crc32 u32
//! ```

use std::fs;
use std::path::Path;
use std::sync::{Mutex, RwLock};

use crate::error::{Error, Result};
use crate::model::{Model, PublishMark};
use crate::probe::{lookup_readonly, Id, IdentityArray, ProbeResult, ShardConfig, EMPTY};
use crate::scalar::Scalar;
use crate::shard::TableLayout;

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"MPZC";
pub const DELTA_MAGIC: [u8; 4] = *b"MPZD";
pub const FORMAT_VERSION: u32 = 1;

const SNAPSHOT_FIXED_HEADER: usize = 4 + 4 + 4 + 4 + 4 + 4 + 8;
const DELTA_HEADER: usize = 4 + 4 + 4 + 4 + 4 + 8;
const LEN_PREFIX: usize = 8;
const CRC_LEN: usize = 4;

/// Exact encoded size of a snapshot.
pub fn snapshot_len(
    num_shards: usize,
    total_rows: usize,
    dim: usize,
    scalar_bytes: usize,
) -> usize {
    SNAPSHOT_FIXED_HEADER
        + 8 * num_shards
        + LEN_PREFIX
        + 8 * total_rows
        + LEN_PREFIX
        + scalar_bytes * dim * total_rows
        + CRC_LEN
}

fn delta_record_len(dim: usize, scalar_bytes: usize) -> usize {
    16 + dim * scalar_bytes
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(Error::Truncated {
                needed: self.pos.saturating_add(n),
                available: self.buf.len(),
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .map_err(|_| Error::Malformed(format!("length {v} does not fit in memory")))
    }
}

fn check_magic(buf: &[u8], expected: [u8; 4]) -> Result<()> {
    if buf.len() < 4 {
        return Err(Error::Truncated {
            needed: 4,
            available: buf.len(),
        });
    }
    let found: [u8; 4] = buf[..4].try_into().unwrap();
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn check_version(version: u32) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    Ok(())
}

fn check_scalar<T: Scalar>(found: u32) -> Result<()> {
    if found as usize != T::BYTES {
        return Err(Error::ScalarMismatch {
            expected: T::BYTES as u32,
            found,
        });
    }
    Ok(())
}

/// Verifies the file is exactly `expected_len` bytes and its trailer matches.
fn check_trailer(buf: &[u8], expected_len: usize) -> Result<u32> {
    if buf.len() < expected_len {
        return Err(Error::Truncated {
            needed: expected_len,
            available: buf.len(),
        });
    }
    if buf.len() > expected_len {
        return Err(Error::Malformed(format!(
            "{} trailing bytes",
            buf.len() - expected_len
        )));
    }
    let (body, tail) = buf.split_at(expected_len - CRC_LEN);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    Ok(stored)
}

fn seal(mut buf: Vec<u8>) -> (Vec<u8>, u32) {
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    (buf, crc)
}

fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::Malformed(format!("{what} {value} exceeds u32")))
}

/// Encodes `model`'s identities and weights. Returns the bytes and their CRC.
pub fn encode_snapshot<T: Scalar>(model: &Model<T>) -> Result<(Vec<u8>, u32)> {
    let layout = model.layout();
    let rows = layout.total_rows();
    let dim = model.dim();
    let mut buf = Vec::with_capacity(snapshot_len(layout.num_shards(), rows, dim, T::BYTES));
    buf.extend_from_slice(&SNAPSHOT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
    buf.extend_from_slice(&to_u32(dim, "dim")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(model.index().max_probe(), "max_probe")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(layout.num_shards(), "num_shards")?.to_le_bytes());
    buf.extend_from_slice(&layout.seed().to_le_bytes());
    for &cap in layout.shard_capacities() {
        buf.extend_from_slice(&(cap as u64).to_le_bytes());
    }
    buf.extend_from_slice(&((8 * rows) as u64).to_le_bytes());
    for identities in model.index().identity_arrays() {
        for &raw in identities.as_raw() {
            buf.extend_from_slice(&raw.to_le_bytes());
        }
    }
    buf.extend_from_slice(&((T::BYTES * dim * rows) as u64).to_le_bytes());
    for &w in model.embeddings().weights() {
        w.put_le(&mut buf);
    }
    Ok(seal(buf))
}

/// Writes a snapshot of `model` to `path` and returns its checksum.
pub fn write_snapshot<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<u32> {
    let (bytes, crc) = encode_snapshot(model)?;
    fs::write(path, bytes)?;
    Ok(crc)
}

pub fn decode_snapshot<T: Scalar>(buf: &[u8]) -> Result<FrozenModel<T>> {
    check_magic(buf, SNAPSHOT_MAGIC)?;
    let mut r = Reader::new(buf);
    r.take(4)?;
    check_version(r.u32()?)?;
    check_scalar::<T>(r.u32()?)?;
    let dim = r.u32()? as usize;
    let max_probe = r.u32()? as usize;
    let num_shards = r.u32()? as usize;
    let seed = r.u64()?;
    let capacities = (0..num_shards)
        .map(|_| r.usize())
        .collect::<Result<Vec<_>>>()?;
    let rows = capacities
        .iter()
        .try_fold(0usize, |acc, &c| acc.checked_add(c))
        .ok_or_else(|| Error::Malformed("row count overflow".into()))?;
    let expected = rows
        .checked_mul(8 + dim * T::BYTES)
        .and_then(|payload| payload.checked_add(snapshot_len(num_shards, 0, dim, T::BYTES)))
        .ok_or_else(|| Error::Malformed("file size overflow".into()))?;
    let checksum = check_trailer(buf, expected)?;
    if dim == 0 {
        return Err(Error::Malformed("zero embedding dim".into()));
    }
    let layout = TableLayout::new(capacities, seed)?;

    if r.usize()? != 8 * rows {
        return Err(Error::Malformed("identity section length".into()));
    }
    let mut identities = Vec::with_capacity(num_shards);
    for &cap in layout.shard_capacities() {
        let raw = (0..cap).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        identities.push(IdentityArray::from_raw(raw)?);
    }
    if r.usize()? != T::BYTES * dim * rows {
        return Err(Error::Malformed("weight section length".into()));
    }
    let weights = r
        .take(T::BYTES * dim * rows)?
        .chunks_exact(T::BYTES)
        .map(T::get_le)
        .collect();
    FrozenModel::new(layout, max_probe, dim, identities, weights, checksum)
}

pub fn read_snapshot<T: Scalar>(path: impl AsRef<Path>) -> Result<FrozenModel<T>> {
    decode_snapshot(&fs::read(path)?)
}

/// One published row: identity and weights travel together.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaRecord<T> {
    pub global_row: usize,
    pub identity: Option<Id>,
    pub weights: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaLog<T> {
    /// Checksum of the snapshot this chain extends.
    pub base_checksum: u32,
    /// 1 for the first log after the snapshot, then consecutive.
    pub sequence: u64,
    pub dim: usize,
    pub records: Vec<DeltaRecord<T>>,
}

/// Current state of every row changed since `mark`.
pub fn dirty_since<T: Scalar>(model: &Model<T>, mark: PublishMark) -> Result<Vec<DeltaRecord<T>>> {
    model
        .dirty_rows(mark)?
        .into_iter()
        .map(|row| {
            Ok(DeltaRecord {
                global_row: row,
                identity: model.index().identity_at(row)?,
                weights: model.embeddings().row(row)?.to_vec(),
            })
        })
        .collect()
}

impl<T: Scalar> DeltaLog<T> {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let rec_len = delta_record_len(self.dim, T::BYTES);
        let mut buf =
            Vec::with_capacity(DELTA_HEADER + LEN_PREFIX + rec_len * self.records.len() + CRC_LEN);
        buf.extend_from_slice(&DELTA_MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
        buf.extend_from_slice(&to_u32(self.dim, "dim")?.to_le_bytes());
        buf.extend_from_slice(&self.base_checksum.to_le_bytes());
        buf.extend_from_slice(&self.sequence.to_le_bytes());
        buf.extend_from_slice(&((rec_len * self.records.len()) as u64).to_le_bytes());
        for rec in &self.records {
            if rec.weights.len() != self.dim {
                return Err(Error::ShapeMismatch {
                    expected: self.dim,
                    actual: rec.weights.len(),
                });
            }
            buf.extend_from_slice(&(rec.global_row as u64).to_le_bytes());
            buf.extend_from_slice(&rec.identity.map_or(EMPTY, Id::get).to_le_bytes());
            for &w in &rec.weights {
                w.put_le(&mut buf);
            }
        }
        Ok(seal(buf).0)
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        check_magic(buf, DELTA_MAGIC)?;
        let mut r = Reader::new(buf);
        r.take(4)?;
        check_version(r.u32()?)?;
        check_scalar::<T>(r.u32()?)?;
        let dim = r.u32()? as usize;
        let base_checksum = r.u32()?;
        let sequence = r.u64()?;
        let section = r.usize()?;
        let rec_len = delta_record_len(dim, T::BYTES);
        if section % rec_len != 0 {
            return Err(Error::Malformed(
                "record section is not a whole number of records".into(),
            ));
        }
        let expected = section
            .checked_add(DELTA_HEADER + LEN_PREFIX + CRC_LEN)
            .ok_or_else(|| Error::Malformed("file size overflow".into()))?;
        check_trailer(buf, expected)?;
        let records = (0..section / rec_len)
            .map(|_| {
                let global_row = r.usize()?;
                let identity = match r.u64()? {
                    EMPTY => None,
                    raw => Some(Id::new(raw)?),
                };
                let weights = r
                    .take(dim * T::BYTES)?
                    .chunks_exact(T::BYTES)
                    .map(T::get_le)
                    .collect();
                Ok(DeltaRecord {
                    global_row,
                    identity,
                    weights,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            base_checksum,
            sequence,
            dim,
            records,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

/// Source-side publication state: the snapshot lineage and the last cut.
#[derive(Clone, Debug)]
pub struct Publisher {
    base_checksum: u32,
    next_sequence: u64,
    mark: PublishMark,
}

impl Publisher {
    /// Writes a full snapshot and starts a new delta chain from it.
    pub fn snapshot<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<Self> {
        let base_checksum = write_snapshot(model, path)?;
        Ok(Self {
            base_checksum,
            next_sequence: 1,
            mark: model.mark(),
        })
    }

    pub fn base_checksum(&self) -> u32 {
        self.base_checksum
    }

    /// Collects every row dirtied since the previous cut.
    pub fn cut<T: Scalar>(&mut self, model: &Model<T>) -> Result<DeltaLog<T>> {
        let records = dirty_since(model, self.mark)?;
        let log = DeltaLog {
            base_checksum: self.base_checksum,
            sequence: self.next_sequence,
            dim: model.dim(),
            records,
        };
        self.mark = model.mark();
        self.next_sequence += 1;
        Ok(log)
    }
}

/// A published table: identities and weights only, read-only for lookups.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenModel<T: Scalar> {
    layout: TableLayout,
    configs: Vec<ShardConfig>,
    dim: usize,
    identities: Vec<IdentityArray>,
    weights: Vec<T>,
    base_checksum: u32,
    last_sequence: u64,
}

impl<T: Scalar> FrozenModel<T> {
    fn new(
        layout: TableLayout,
        max_probe: usize,
        dim: usize,
        identities: Vec<IdentityArray>,
        weights: Vec<T>,
        base_checksum: u32,
    ) -> Result<Self> {
        let configs = layout
            .shard_capacities()
            .iter()
            .enumerate()
            .map(|(s, &cap)| ShardConfig::new(cap, max_probe, s, layout.seed()))
            .collect::<Result<_>>()?;
        Ok(Self {
            layout,
            configs,
            dim,
            identities,
            weights,
            base_checksum,
            last_sequence: 0,
        })
    }

    pub fn layout(&self) -> &TableLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_probe(&self) -> usize {
        self.configs[0].max_probe()
    }

    pub fn base_checksum(&self) -> u32 {
        self.base_checksum
    }

    pub fn last_sequence(&self) -> u64 {
        self.last_sequence
    }

    pub fn identity_arrays(&self) -> &[IdentityArray] {
        &self.identities
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn identity_at(&self, row: usize) -> Result<Option<Id>> {
        let (s, slot) = self.layout.from_global(row)?;
        Ok(self.identities[s].get(slot))
    }

    /// Read-only lookup; misses return the home row with `Collision`.
    pub fn lookup(&self, id: Id) -> ProbeResult {
        let s = self.layout.shard_of(id);
        let r = lookup_readonly(id, &self.identities[s], &self.configs[s]);
        ProbeResult {
            slot: self.layout.shard_offsets()[s] + r.slot,
            outcome: r.outcome,
        }
    }

    pub fn gather(&self, rows: &[usize]) -> Result<Vec<T>> {
        let total = self.layout.total_rows();
        let mut out = Vec::with_capacity(rows.len() * self.dim);
        for &row in rows {
            if row >= total {
                return Err(Error::RowOutOfRange { row, rows: total });
            }
            out.extend_from_slice(&self.weights[row * self.dim..(row + 1) * self.dim]);
        }
        Ok(out)
    }

    /// Training-path lookups are not available on a published table.
    pub fn lookup_or_insert(&mut self, _id: Id, _now: u64) -> Result<ProbeResult> {
        Err(Error::Frozen)
    }

    pub fn sgd_step(&mut self, _rows: &[usize], _grads: &[T], _lr: T, _beta: T) -> Result<()> {
        Err(Error::Frozen)
    }

    pub fn reset_row(&mut self, _row: usize) -> Result<()> {
        Err(Error::Frozen)
    }

    fn check_lineage(&self, log: &DeltaLog<T>) -> Result<()> {
        if log.base_checksum != self.base_checksum {
            return Err(Error::LineageMismatch {
                log: log.base_checksum,
                replica: self.base_checksum,
            });
        }
        if log.sequence != self.last_sequence + 1 {
            return Err(Error::OutOfOrder {
                expected: self.last_sequence + 1,
                found: log.sequence,
            });
        }
        if log.dim != self.dim {
            return Err(Error::ShapeMismatch {
                expected: self.dim,
                actual: log.dim,
            });
        }
        let total = self.layout.total_rows();
        for rec in &log.records {
            if rec.global_row >= total {
                return Err(Error::RowOutOfRange {
                    row: rec.global_row,
                    rows: total,
                });
            }
            if rec.weights.len() != self.dim {
                return Err(Error::ShapeMismatch {
                    expected: self.dim,
                    actual: rec.weights.len(),
                });
            }
        }
        Ok(())
    }

    fn apply_record(&mut self, rec: &DeltaRecord<T>) {
        let (s, slot) = self
            .layout
            .from_global(rec.global_row)
            .expect("rows validated before applying");
        self.identities[s].set(slot, rec.identity);
        self.weights[rec.global_row * self.dim..(rec.global_row + 1) * self.dim]
            .copy_from_slice(&rec.weights);
    }

    /// Applies one delta log. The whole log is validated before any record
    /// is written.
    pub fn apply_delta(&mut self, log: &DeltaLog<T>) -> Result<()> {
        self.check_lineage(log)?;
        for rec in &log.records {
            self.apply_record(rec);
        }
        self.last_sequence = log.sequence;
        Ok(())
    }
}

/// A frozen table shared between readers and one delta applier. Each record
/// is applied under the write lock, so readers never see a row whose identity
/// and weights come from different records.
#[derive(Debug)]
pub struct Replica<T: Scalar> {
    model: RwLock<FrozenModel<T>>,
    applier: Mutex<()>,
}

impl<T: Scalar> Replica<T> {
    pub fn new(model: FrozenModel<T>) -> Self {
        Self {
            model: RwLock::new(model),
            applier: Mutex::new(()),
        }
    }

    pub fn apply_delta(&self, log: &DeltaLog<T>) -> Result<()> {
        let _guard = self.applier.lock().unwrap();
        self.model.read().unwrap().check_lineage(log)?;
        for rec in &log.records {
            self.model.write().unwrap().apply_record(rec);
        }
        self.model.write().unwrap().last_sequence = log.sequence;
        Ok(())
    }

    /// Looks up `id` and copies its row in one consistent read.
    pub fn lookup_row(&self, id: Id) -> (ProbeResult, Vec<T>) {
        let model = self.model.read().unwrap();
        let r = model.lookup(id);
        let row = model.gather(&[r.slot]).expect("lookup returns valid rows");
        (r, row)
    }

    pub fn read<R>(&self, f: impl FnOnce(&FrozenModel<T>) -> R) -> R {
        f(&self.model.read().unwrap())
    }

    pub fn into_inner(self) -> FrozenModel<T> {
        self.model.into_inner().unwrap()
    }
}
