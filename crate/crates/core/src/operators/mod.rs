//! Structured linear operators: block-diagonal group projections, the two
//! group-mixing transforms, and their low-rank composition.

mod block_diagonal;
mod compressed;
mod shuffle;

pub use block_diagonal::{mv_block_diagonal, BlockDiagonal};
pub use compressed::{
    apply, factor_layout, init_weights, materialize, validate, CompressedLinear, FactorLayout, LowRankLgp,
    SvdLinear,
};
pub use shuffle::{apply_shuffle, apply_shuffle_inverse, ShuffleMix};

pub use crate::linalg::mv_dense;

/// Scheduling of the independent block products inside an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    #[default]
    Serial,
    /// Blocks of a block-diagonal product run on the rayon pool.
    Parallel,
}

impl Exec {
    /// `ANTMAN_THREADS=1` (or unset) selects serial execution; larger values
    /// select the block-parallel path.
    pub fn from_env() -> Exec {
        match threads_from_env() {
            Some(n) if n > 1 => Exec::Parallel,
            _ => Exec::Serial,
        }
    }
}

/// Parses `ANTMAN_THREADS`; non-integers and zero are ignored.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("ANTMAN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CompressionConfig, MixSide, OperatorKind};
    use crate::linalg::{max_rel_err, DenseMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_x(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn lgp_shuffle_single_group_matches_dense() {
        let cfg = CompressionConfig::lgp_shuffle(6, 4, 1);
        let op = CompressedLinear::<f64>::init(&cfg, 3).unwrap();
        let dense = DenseMatrix::from_vec(6, 4, op.factors()[0].to_vec()).unwrap();
        assert_eq!(op.materialize(), dense);
        let x = [0.3, -0.1, 0.7, 0.2];
        assert_eq!(op.apply(&x).unwrap(), mv_dense(&dense, &x).unwrap());
    }

    #[test]
    fn low_rank_single_groups_is_three_chained_dense_mvs() {
        let cfg = CompressionConfig::low_rank_lgp(6, 8, 2, 1, 1);
        let op = CompressedLinear::<f64>::init(&cfg, 11).unwrap();
        let f = op.factors();
        let d_in = DenseMatrix::from_vec(4, 8, f[0].to_vec()).unwrap();
        let m_r = DenseMatrix::from_vec(4, 4, f[1].to_vec()).unwrap();
        let d_out = DenseMatrix::from_vec(6, 4, f[2].to_vec()).unwrap();
        let x: Vec<f64> = (0..8).map(|k| (k as f64 * 0.4).cos()).collect();
        let chained = mv_dense(&d_out, &mv_dense(&m_r, &mv_dense(&d_in, &x).unwrap()).unwrap()).unwrap();
        assert_eq!(op.apply(&x).unwrap(), chained);
        // Same map as an SVD whose P absorbs the mix.
        let svd = CompressedLinear::Svd(SvdLinear {
            rank_factor: 2,
            p: d_out.matmul(&m_r).unwrap(),
            q: d_in,
        });
        svd.validate().unwrap();
        assert!(max_rel_err(&svd.apply(&x).unwrap(), &chained) < 1e-14);
    }

    #[test]
    fn lgp_dense_random_against_materialized() {
        let cfg = CompressionConfig::lgp_dense(6, 4, 2);
        let op = CompressedLinear::<f64>::init(&cfg, 5).unwrap();
        assert!(matches!(
            op,
            CompressedLinear::LgpDense {
                side: MixSide::Before,
                ..
            }
        ));
        let a = op.materialize();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = random_x(&mut rng, 4);
            worst = worst.max(max_rel_err(&op.apply(&x).unwrap(), &mv_dense(&a, &x).unwrap()));
        }
        assert!(worst < 1e-12, "max rel err {worst}");
    }

    #[test]
    fn low_rank_materialization_rank_is_bounded() {
        let cfg = CompressionConfig::low_rank_lgp(12, 12, 3, 2, 2);
        let op = CompressedLinear::<f64>::init(&cfg, 8).unwrap();
        let a = op.materialize();
        let na = nalgebra::DMatrix::from_row_slice(12, 12, a.as_slice());
        assert!(na.rank(1e-10) <= 4);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = CompressionConfig::low_rank_lgp(40, 50, 5, 2, 5);
        let a = CompressedLinear::<f64>::init(&cfg, 42).unwrap();
        let b = CompressedLinear::<f64>::init(&cfg, 42).unwrap();
        let c = CompressedLinear::<f64>::init(&cfg, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);

        let cfg = CompressionConfig::dense(10, 100);
        let op = CompressedLinear::<f64>::init(&cfg, 1).unwrap();
        let w = op.factors()[0];
        assert_eq!(w.len(), 1000);
        assert!(w.iter().all(|v| v.abs() <= 0.1));
        // Samples actually spread across the interval.
        assert!(w.iter().any(|&v| v > 0.09) && w.iter().any(|&v| v < -0.09));
    }

    #[test]
    fn init_rejects_invalid_config() {
        assert!(CompressedLinear::<f64>::init(&CompressionConfig::lgp_shuffle(10, 4, 3), 0).is_err());
    }

    #[test]
    fn validate_catches_non_finite_weights() {
        let mut op = CompressedLinear::<f64>::init(&CompressionConfig::lgp_dense(4, 8, 2), 0).unwrap();
        op.factors_mut()[1][0] = f64::NAN;
        assert_eq!(
            op.validate().unwrap_err().to_string(),
            "mix contains a non-finite value"
        );
    }

    #[test]
    fn param_count_matches_layout() {
        for kind in OperatorKind::ALL {
            let cfg = match kind {
                OperatorKind::Dense => CompressionConfig::dense(12, 8),
                OperatorKind::Svd => CompressionConfig::svd(12, 8, 2),
                OperatorKind::LgpShuffle => CompressionConfig::lgp_shuffle(12, 8, 4),
                OperatorKind::LgpDense => CompressionConfig::lgp_dense(12, 8, 4),
                OperatorKind::LowRankLgp => CompressionConfig::low_rank_lgp(12, 8, 2, 2, 4),
            };
            let op = CompressedLinear::<f64>::init(&cfg, 0).unwrap();
            let expected: usize = factor_layout(&cfg).unwrap().iter().map(|l| l.len()).sum();
            assert_eq!(op.param_count(), expected);
            assert_eq!(op.config(), cfg);
        }
    }

    #[test]
    fn shape_errors_on_wrong_input() {
        let op = CompressedLinear::<f64>::init(&CompressionConfig::svd(4, 6, 2), 0).unwrap();
        assert!(op.apply(&[0.0; 4]).is_err());
        assert!(op.apply_batch(2, &[0.0; 11], Exec::Serial).is_err());
    }
}
