//! Trainable embedding rows with momentum state.
//!
//! Rows are stored flat, `dim` elements per row. Evicted rows are redrawn
//! from a per-row seeded stream so a reset never depends on history.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::mix64;
use crate::scalar::Scalar;

/// Uniform initialization on `[-1/sqrt(dim), 1/sqrt(dim)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowInit {
    pub init_seed: u64,
}

impl RowInit {
    pub fn new(init_seed: u64) -> Self {
        Self { init_seed }
    }

    pub fn bound<T: Scalar>(dim: usize) -> T {
        T::one() / T::from_usize(dim).expect("dim fits the scalar type").sqrt()
    }

    /// Fills `out` with the draw for `row`.
    pub fn fill<T: Scalar>(&self, row: usize, out: &mut [T]) {
        let bound = Self::bound::<T>(out.len());
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(row as u64, self.init_seed));
        for w in out {
            *w = dist.sample(&mut rng);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<T: Scalar> {
    dim: usize,
    weights: Vec<T>,
    momentum: Vec<T>,
    trained: Vec<bool>,
}

impl<T: Scalar> EmbeddingTable<T> {
    /// Every row starts from its initializer draw with zero momentum.
    pub fn new(rows: usize, dim: usize, init: &RowInit) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidHyperparameter(
                "embedding dim must be positive",
            ));
        }
        let mut weights = vec![T::zero(); rows * dim];
        for (row, chunk) in weights.chunks_exact_mut(dim).enumerate() {
            init.fill(row, chunk);
        }
        Ok(Self {
            dim,
            weights,
            momentum: vec![T::zero(); rows * dim],
            trained: vec![false; rows],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.trained.len()
    }

    fn check_row(&self, row: usize) -> Result<()> {
        if row < self.rows() {
            Ok(())
        } else {
            Err(Error::RowOutOfRange {
                row,
                rows: self.rows(),
            })
        }
    }

    fn span(&self, row: usize) -> std::ops::Range<usize> {
        row * self.dim..(row + 1) * self.dim
    }

    pub fn row(&self, row: usize) -> Result<&[T]> {
        self.check_row(row)?;
        Ok(&self.weights[self.span(row)])
    }

    pub fn momentum(&self, row: usize) -> Result<&[T]> {
        self.check_row(row)?;
        Ok(&self.momentum[self.span(row)])
    }

    pub fn is_trained(&self, row: usize) -> Result<bool> {
        self.check_row(row)?;
        Ok(self.trained[row])
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Redraws the row's weights and clears its optimizer state.
    pub fn reset_row(&mut self, row: usize, init: &RowInit) -> Result<()> {
        self.check_row(row)?;
        let span = self.span(row);
        init.fill(row, &mut self.weights[span.clone()]);
        self.momentum[span].fill(T::zero());
        self.trained[row] = false;
        Ok(())
    }

    /// Momentum SGD: `m = beta * m + g; w -= lr * m` for each listed row, in
    /// order. `grads` holds one `dim`-vector per entry of `rows`.
    pub fn sgd_step(&mut self, rows: &[usize], grads: &[T], lr: T, beta: T) -> Result<()> {
        if grads.len() != rows.len() * self.dim {
            return Err(Error::ShapeMismatch {
                expected: rows.len() * self.dim,
                actual: grads.len(),
            });
        }
        if lr.is_nan() || lr <= T::zero() {
            return Err(Error::InvalidHyperparameter(
                "learning rate must be positive",
            ));
        }
        if !(beta >= T::zero() && beta < T::one()) {
            return Err(Error::InvalidHyperparameter("momentum must lie in [0, 1)"));
        }
        for &row in rows {
            self.check_row(row)?;
        }
        for (&row, grad) in rows.iter().zip(grads.chunks_exact(self.dim)) {
            let span = self.span(row);
            let m = &mut self.momentum[span.clone()];
            let w = &mut self.weights[span];
            for ((w, m), &g) in w.iter_mut().zip(m.iter_mut()).zip(grad) {
                *m = beta * *m + g;
                *w = *w - lr * *m;
            }
            self.trained[row] = true;
        }
        Ok(())
    }

    /// Copies of the requested rows, concatenated in request order.
    pub fn gather(&self, rows: &[usize]) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(rows.len() * self.dim);
        for &row in rows {
            out.extend_from_slice(self.row(row)?);
        }
        Ok(out)
    }
}
