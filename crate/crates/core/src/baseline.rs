//! Stateless hashing-trick assignment used as the comparison method. Distinct
//! ids that hash to the same row silently share it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::mix64;
use crate::probe::Id;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineConfig {
    table_size: usize,
    seed: u64,
}

impl BaselineConfig {
    pub fn new(table_size: usize, seed: u64) -> Result<Self> {
        if table_size == 0 {
            return Err(Error::InvalidSpec(
                "baseline table_size must be positive".into(),
            ));
        }
        Ok(Self { table_size, seed })
    }

    pub fn table_size(&self) -> usize {
        self.table_size
    }
}

#[inline]
pub fn baseline_assign(id: Id, cfg: &BaselineConfig) -> usize {
    (mix64(id.get(), cfg.seed) % cfg.table_size as u64) as usize
}
