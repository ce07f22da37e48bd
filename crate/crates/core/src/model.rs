//! A trainable sharded table: the multi-probe index, the embedding rows it
//! addresses, and the bookkeeping that ties them together.
//!
//! Every `Evicted` outcome resets its row before the batch returns, and every
//! write to a row's identity or weights is stamped so that delta publishing
//! can find exactly the rows that changed.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::batch::{process_batch, process_batch_sequential, BatchOutput, IdBatch};
use crate::embedding::{EmbeddingTable, RowInit};
use crate::error::{Error, Result};
use crate::eviction::EvictionPolicy;
use crate::probe::{Id, Outcome, ProbeResult};
use crate::scalar::Scalar;
use crate::shard::{ShardedIndex, TableLayout};

static NEXT_TOKEN: AtomicU64 = AtomicU64::new(1);

/// Publication cursor returned by [`Model::mark`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PublishMark {
    pub(crate) token: u64,
    pub(crate) clock: u64,
}

#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    index: ShardedIndex,
    table: EmbeddingTable<T>,
    policy: EvictionPolicy,
    init: RowInit,
    token: u64,
    clock: u64,
    row_stamps: Vec<u64>,
}

impl<T: Scalar> Model<T> {
    pub fn new(
        layout: TableLayout,
        max_probe: usize,
        dim: usize,
        policy: EvictionPolicy,
        init: RowInit,
    ) -> Result<Self> {
        let rows = layout.total_rows();
        let index = ShardedIndex::new(layout, max_probe)?;
        let table = EmbeddingTable::new(rows, dim, &init)?;
        Ok(Self {
            index,
            table,
            policy,
            init,
            token: NEXT_TOKEN.fetch_add(1, Ordering::Relaxed),
            clock: 0,
            row_stamps: vec![0; rows],
        })
    }

    pub fn index(&self) -> &ShardedIndex {
        &self.index
    }

    pub fn layout(&self) -> &TableLayout {
        self.index.layout()
    }

    pub fn embeddings(&self) -> &EmbeddingTable<T> {
        &self.table
    }

    pub fn policy(&self) -> &EvictionPolicy {
        &self.policy
    }

    pub fn init(&self) -> &RowInit {
        &self.init
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    fn touch(&mut self, row: usize) {
        self.clock += 1;
        self.row_stamps[row] = self.clock;
    }

    fn absorb(&mut self, out: &BatchOutput) -> Result<()> {
        for r in &out.unique_results {
            match r.outcome {
                Outcome::Evicted => {
                    self.table.reset_row(r.slot, &self.init)?;
                    self.touch(r.slot);
                }
                Outcome::Inserted => self.touch(r.slot),
                Outcome::Found | Outcome::Collision => {}
            }
        }
        Ok(())
    }

    /// Assigns rows to every id in the batch, shards in parallel.
    pub fn train_batch(&mut self, batch: &IdBatch) -> Result<BatchOutput> {
        let out = process_batch(&mut self.index, batch, &self.policy)?;
        self.absorb(&out)?;
        Ok(out)
    }

    /// Same as [`Model::train_batch`] on the calling thread only.
    pub fn train_batch_sequential(&mut self, batch: &IdBatch) -> Result<BatchOutput> {
        let out = process_batch_sequential(&mut self.index, batch, &self.policy)?;
        self.absorb(&out)?;
        Ok(out)
    }

    pub fn sgd_step(&mut self, rows: &[usize], grads: &[T], lr: T, beta: T) -> Result<()> {
        self.table.sgd_step(rows, grads, lr, beta)?;
        for &row in rows {
            self.touch(row);
        }
        Ok(())
    }

    /// Read-only lookup; never allocates.
    pub fn lookup(&self, id: Id) -> ProbeResult {
        self.index.lookup(id)
    }

    pub fn gather(&self, rows: &[usize]) -> Result<Vec<T>> {
        self.table.gather(rows)
    }

    /// Cursor for the current state.
    pub fn mark(&self) -> PublishMark {
        PublishMark {
            token: self.token,
            clock: self.clock,
        }
    }

    /// Rows whose identity or weights changed after `mark`, ascending.
    pub fn dirty_rows(&self, mark: PublishMark) -> Result<Vec<usize>> {
        if mark.token != self.token || mark.clock > self.clock {
            return Err(Error::UnknownMark);
        }
        Ok(self
            .row_stamps
            .iter()
            .enumerate()
            .filter(|(_, &stamp)| stamp > mark.clock)
            .map(|(row, _)| row)
            .collect())
    }
}
