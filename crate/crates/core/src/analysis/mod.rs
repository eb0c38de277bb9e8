//! Cost models, the FLOP counter and brute-force oracles.

pub mod flops;
mod models;
mod oracles;

pub use models::{
    affinity_memory_model, downsampled_flops_model, issa_core_term, issa_flops_model,
    optimal_partition, sa_core_term, sa_flops_model, Method,
};
pub use oracles::{
    apply_effective, connectivity_jacobian, gradient_check_issa, gradient_check_sa,
    materialize_effective_matrix, materialize_effective_matrix_ordered, numeric_gradient,
    relative_max_error, EffectiveMatrices, GradCheck, StageSelector, FD_STEP, JACOBIAN_CAP,
    MATERIALIZE_CAP,
};

use crate::error::{IssaError, Result};
use crate::interlaced::invert;
use crate::tensor::Matrix;

/// A block-diagonal affinity in permuted coordinates.
///
/// Slot `i` of the permuted order holds original position `permutation[i]`;
/// block `b` covers the consecutive slots after blocks `0..b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAffinity {
    permutation: Vec<usize>,
    blocks: Vec<Matrix>,
    total_dim: usize,
}

impl BlockAffinity {
    pub fn new(permutation: Vec<usize>, blocks: Vec<Matrix>) -> Result<Self> {
        for b in &blocks {
            if b.rows() != b.cols() {
                return Err(IssaError::shape("affinity block", &b.shape(), &[b.rows(), b.rows()]));
            }
        }
        let total_dim = blocks.iter().map(Matrix::rows).sum();
        if permutation.len() != total_dim {
            return Err(IssaError::shape("affinity permutation", &[permutation.len()], &[total_dim]));
        }
        invert(&permutation)?;
        Ok(BlockAffinity {
            permutation,
            blocks,
            total_dim,
        })
    }

    /// One dense block over positions in their natural order.
    pub fn single(a: Matrix) -> Self {
        let n = a.rows();
        BlockAffinity {
            permutation: (0..n).collect(),
            blocks: vec![a],
            total_dim: n,
        }
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    /// Start slot of every block, followed by `total_dim`.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut offsets = vec![0];
        for b in &self.blocks {
            offsets.push(offsets.last().unwrap() + b.rows());
        }
        offsets
    }

    /// Largest `|row sum − 1|` over all block rows.
    pub fn max_row_sum_error(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| (0..b.rows()).map(move |r| (b.row(r).iter().sum::<f64>() - 1.0).abs()))
            .fold(0.0, f64::max)
    }

    /// The explicit `total_dim × total_dim` block-diagonal matrix.
    pub fn to_dense_permuted(&self) -> Matrix {
        let mut out = Matrix::zeros(self.total_dim, self.total_dim);
        let offsets = self.block_offsets();
        for (b, &o) in self.blocks.iter().zip(&offsets) {
            for r in 0..b.rows() {
                out.row_mut(o + r)[o..o + b.cols()].copy_from_slice(b.row(r));
            }
        }
        out
    }

    /// `Pᵀ·A·P`: the same affinity indexed by original positions.
    pub fn to_dense_original(&self) -> Matrix {
        let dense = self.to_dense_permuted();
        let mut out = Matrix::zeros(self.total_dim, self.total_dim);
        for (i, &pi) in self.permutation.iter().enumerate() {
            for (j, &pj) in self.permutation.iter().enumerate() {
                out.set(pi, pj, dense.get(i, j));
            }
        }
        out
    }

    /// Number of nonzero entries of `dense` outside this affinity's diagonal
    /// blocks. Exact comparison against `0.0`.
    pub fn off_block_nonzeros(&self, dense: &Matrix) -> usize {
        let offsets = self.block_offsets();
        let block_of = |slot: usize| offsets.partition_point(|&o| o <= slot) - 1;
        let mut count = 0;
        for i in 0..dense.rows() {
            for j in 0..dense.cols() {
                if block_of(i) != block_of(j) && dense.get(i, j) != 0.0 {
                    count += 1;
                }
            }
        }
        count
    }
}
