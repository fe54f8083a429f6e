//! Structured-sparse and low-rank compressed linear operators for recurrent
//! network inference.
//!
//! A dense `m x n` matrix-vector product is replaced by one of:
//!
//! * **LGP-Shuffle** `S D_g x`: a block-diagonal product with `g` groups
//!   followed by a zero-parameter shuffle that interleaves the groups.
//! * **LGP-Dense** `M D_g x` or `D_g M x`: the same block-diagonal product
//!   with a square dense mix on the smaller side.
//! * **LowRank-LGP** `D_out M_r D_in x`: block-diagonal projections into
//!   and out of an `n/r` bottleneck around a fused square mix.
//!
//! [`costmodel`] counts their multiply-adds exactly, [`rnn`] builds LSTMs
//! from them, [`training`] distills dense teachers into compressed
//! students, and [`bench`] measures actual against theoretical speedup.

pub mod bench;
pub mod cli;
pub mod config;
pub mod costmodel;
pub mod error;
pub mod linalg;
pub mod operators;
pub mod rnn;
pub mod training;
pub mod verify;

pub use config::{CompressionConfig, MixSide, OperatorKind, OperatorSpec};
pub use error::{ConfigError, Error, Result, ShapeError};
pub use linalg::{mv_dense, DenseMatrix, Scalar};
pub use operators::{BlockDiagonal, CompressedLinear, Exec, ShuffleMix};
