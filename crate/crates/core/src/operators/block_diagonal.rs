use rayon::prelude::*;

use crate::error::{ConfigError, ShapeError};
use crate::linalg::{cast_slice, gemm_columns, gemv, DenseMatrix, Scalar};

use super::Exec;

/// `m x n` map made of `g` dense blocks on its diagonal. Block `b` covers
/// rows `[b*m/g, (b+1)*m/g)` and columns `[b*n/g, (b+1)*n/g)`; output group
/// `b` depends only on input group `b`.
///
/// Blocks are stored back to back, each row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonal<T = f64> {
    out_dim: usize,
    in_dim: usize,
    groups: usize,
    weights: Vec<T>,
}

impl<T: Scalar> BlockDiagonal<T> {
    pub fn new(out_dim: usize, in_dim: usize, groups: usize, weights: Vec<T>) -> Result<Self, ConfigError> {
        Self::check_dims(out_dim, in_dim, groups)?;
        let expected = out_dim * in_dim / groups;
        if weights.len() != expected {
            return Err(ConfigError::FactorSize {
                field: "blocks".into(),
                expected,
                found: weights.len(),
            });
        }
        Ok(BlockDiagonal {
            out_dim,
            in_dim,
            groups,
            weights,
        })
    }

    pub fn zeros(out_dim: usize, in_dim: usize, groups: usize) -> Result<Self, ConfigError> {
        Self::check_dims(out_dim, in_dim, groups)?;
        Ok(BlockDiagonal {
            out_dim,
            in_dim,
            groups,
            weights: vec![T::zero(); out_dim * in_dim / groups],
        })
    }

    pub fn from_blocks(blocks: &[DenseMatrix<T>]) -> Result<Self, ConfigError> {
        let first = blocks.first().ok_or(ConfigError::Zero { field: "groups" })?;
        let (br, bc) = (first.rows(), first.cols());
        if blocks.iter().any(|b| b.rows() != br || b.cols() != bc) {
            return Err(ConfigError::Invalid("blocks must share one shape".into()));
        }
        let weights = blocks.iter().flat_map(|b| b.as_slice().iter().copied()).collect();
        Self::new(br * blocks.len(), bc * blocks.len(), blocks.len(), weights)
    }

    fn check_dims(out_dim: usize, in_dim: usize, groups: usize) -> Result<(), ConfigError> {
        if out_dim == 0 {
            return Err(ConfigError::Zero { field: "m" });
        }
        if in_dim == 0 {
            return Err(ConfigError::Zero { field: "n" });
        }
        if groups == 0 {
            return Err(ConfigError::Zero { field: "g" });
        }
        if !out_dim.is_multiple_of(groups) {
            return Err(ConfigError::divides("g", "m"));
        }
        if !in_dim.is_multiple_of(groups) {
            return Err(ConfigError::divides("g", "n"));
        }
        Ok(())
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn block_rows(&self) -> usize {
        self.out_dim / self.groups
    }

    pub fn block_cols(&self) -> usize {
        self.in_dim / self.groups
    }

    /// `m * n / g`.
    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    /// Row-major weights of block `b`.
    pub fn block(&self, b: usize) -> &[T] {
        let size = self.block_rows() * self.block_cols();
        &self.weights[b * size..(b + 1) * size]
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn cast<U: Scalar>(&self) -> BlockDiagonal<U> {
        BlockDiagonal {
            out_dim: self.out_dim,
            in_dim: self.in_dim,
            groups: self.groups,
            weights: cast_slice(&self.weights),
        }
    }

    pub fn materialize(&self) -> DenseMatrix<T> {
        let (br, bc) = (self.block_rows(), self.block_cols());
        let mut out = DenseMatrix::zeros(self.out_dim, self.in_dim);
        for b in 0..self.groups {
            let block = self.block(b);
            for i in 0..br {
                for j in 0..bc {
                    out.set(b * br + i, b * bc + j, block[i * bc + j]);
                }
            }
        }
        out
    }

    pub fn mv(&self, x: &[T]) -> Result<Vec<T>, ShapeError> {
        self.mv_with(x, Exec::Serial)
    }

    pub fn mv_with(&self, x: &[T], exec: Exec) -> Result<Vec<T>, ShapeError> {
        ShapeError::check("block-diagonal mv", self.in_dim, x.len())?;
        let mut y = vec![T::zero(); self.out_dim];
        self.mv_into(x, &mut y, exec);
        Ok(y)
    }

    /// One small dense MV per block. Blocks write disjoint output segments,
    /// so the parallel schedule cannot change any result.
    pub(crate) fn mv_into(&self, x: &[T], y: &mut [T], exec: Exec) {
        let (br, bc) = (self.block_rows(), self.block_cols());
        let run = |(b, yb): (usize, &mut [T])| {
            gemv(br, bc, self.block(b), &x[b * bc..(b + 1) * bc], yb);
        };
        match exec {
            Exec::Serial => y.chunks_mut(br).enumerate().for_each(run),
            Exec::Parallel => y.par_chunks_mut(br).enumerate().for_each(run),
        }
    }

    /// Applies the operator to `batch` stacked inputs (`batch x n`).
    pub(crate) fn mv_batch(&self, batch: usize, xs: &[T], exec: Exec) -> Vec<T> {
        let (m, n) = (self.out_dim, self.in_dim);
        let (br, bc) = (self.block_rows(), self.block_cols());
        // Regroup as one contiguous `batch x bc` panel per block so every
        // block is a plain batched MV.
        let mut panels: Vec<Vec<T>> = (0..self.groups)
            .map(|b| {
                let mut p = Vec::with_capacity(batch * bc);
                for t in 0..batch {
                    p.extend_from_slice(&xs[t * n + b * bc..t * n + (b + 1) * bc]);
                }
                p
            })
            .collect();
        let outs: Vec<Vec<T>> = {
            let run = |(b, p): (usize, &mut Vec<T>)| {
                let mut o = vec![T::zero(); batch * br];
                gemm_columns(br, bc, self.block(b), batch, p, &mut o);
                o
            };
            match exec {
                Exec::Serial => panels.iter_mut().enumerate().map(run).collect(),
                Exec::Parallel => panels.par_iter_mut().enumerate().map(run).collect(),
            }
        };
        let mut ys = vec![T::zero(); batch * m];
        for (b, o) in outs.iter().enumerate() {
            for t in 0..batch {
                ys[t * m + b * br..t * m + (b + 1) * br].copy_from_slice(&o[t * br..(t + 1) * br]);
            }
        }
        ys
    }
}

/// Block-diagonal matrix-vector product.
pub fn mv_block_diagonal<T: Scalar>(d: &BlockDiagonal<T>, x: &[T]) -> Result<Vec<T>, ShapeError> {
    d.mv(x)
}
