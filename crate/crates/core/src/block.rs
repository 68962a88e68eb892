//! Block-structured index sets and data vectors.
//!
//! The solvers operate on systems of `p` equations `A_i x = y_i`. Data-space
//! quantities (right-hand sides, dual block variables) are concatenations of
//! per-block vectors; [`BlockVec`] stores them flat with an offset table.
//! [`BatchIndexSet`] is a sorted subset of block indices drawn at each
//! iteration. Block indices are 0-based throughout.

use crate::error::{Result, SolverError};
use crate::scalar::Scalar;

/// A sorted set of distinct block indices in `0..p`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BatchIndexSet {
    indices: Vec<usize>,
}

impl BatchIndexSet {
    /// Builds a batch from arbitrary indices; sorts them and rejects
    /// duplicates or out-of-range entries.
    pub fn new(mut indices: Vec<usize>, p: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(SolverError::invalid("batch index set must be non-empty"));
        }
        indices.sort_unstable();
        for w in indices.windows(2) {
            if w[0] == w[1] {
                return Err(SolverError::invalid(format!(
                    "duplicate block index {} in batch",
                    w[0]
                )));
            }
        }
        let last = *indices.last().unwrap();
        if last >= p {
            return Err(SolverError::invalid(format!(
                "block index {last} out of range for p={p}"
            )));
        }
        Ok(BatchIndexSet { indices })
    }

    /// The singleton batch `{i}`.
    pub fn singleton(i: usize) -> Self {
        BatchIndexSet { indices: vec![i] }
    }

    /// The full batch `{0, …, p-1}`.
    pub fn full(p: usize) -> Self {
        BatchIndexSet {
            indices: (0..p).collect(),
        }
    }

    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Batch size `b`.
    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Sole index of a singleton batch.
    pub fn sole(&self) -> Option<usize> {
        if self.indices.len() == 1 {
            Some(self.indices[0])
        } else {
            None
        }
    }
}

/// Flat storage for a tuple of per-block vectors `(v_1, …, v_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVec<F> {
    data: Vec<F>,
    offsets: Vec<usize>,
}

impl<F: Scalar> BlockVec<F> {
    /// Zero vector with the given block dimensions.
    pub fn zeros(dims: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0usize;
        offsets.push(0);
        for &d in dims {
            acc += d;
            offsets.push(acc);
        }
        BlockVec {
            data: vec![F::zero(); acc],
            offsets,
        }
    }

    /// Assembles a block vector from owned per-block slices.
    pub fn from_blocks(blocks: Vec<Vec<F>>) -> Self {
        let dims: Vec<usize> = blocks.iter().map(|b| b.len()).collect();
        let mut v = Self::zeros(&dims);
        for (i, b) in blocks.into_iter().enumerate() {
            v.block_mut(i).copy_from_slice(&b);
        }
        v
    }

    /// Wraps a flat vector given the block dimensions.
    pub fn from_flat(data: Vec<F>, dims: &[usize]) -> Result<Self> {
        let total: usize = dims.iter().sum();
        if data.len() != total {
            return Err(SolverError::DimensionMismatch {
                what: "BlockVec::from_flat",
                expected: total,
                got: data.len(),
            });
        }
        let mut v = Self::zeros(dims);
        v.data = data;
        Ok(v)
    }

    #[inline]
    pub fn num_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn total_len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn block_dim(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn dims(&self) -> Vec<usize> {
        (0..self.num_blocks()).map(|i| self.block_dim(i)).collect()
    }

    #[inline]
    pub fn block(&self, i: usize) -> &[F] {
        &self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn block_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// Gathers the blocks of `set` into one stacked slice (batch order).
    pub fn gather(&self, set: &BatchIndexSet, out: &mut Vec<F>) {
        out.clear();
        for &i in set.indices() {
            out.extend_from_slice(self.block(i));
        }
    }
}
