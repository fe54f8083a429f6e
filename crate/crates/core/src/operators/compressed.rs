use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{CompressionConfig, MixSide, OperatorKind};
use crate::error::{ConfigError, ShapeError};
use crate::linalg::{gemm_columns, gemv, DenseMatrix, Scalar};

use super::{BlockDiagonal, Exec, ShuffleMix};

/// Rank-reduced `P Q` product: `Q` is `(n/r) x n`, `P` is `m x (n/r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdLinear<T = f64> {
    pub rank_factor: usize,
    pub p: DenseMatrix<T>,
    pub q: DenseMatrix<T>,
}

/// `D_out M_r D_in`: block-diagonal projection down to the `n/r` bottleneck,
/// a fused square mix, and a block-diagonal projection back up to `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankLgp<T = f64> {
    pub rank_factor: usize,
    pub d_in: BlockDiagonal<T>,
    pub m_r: DenseMatrix<T>,
    pub d_out: BlockDiagonal<T>,
}

/// The family of linear maps an `m x n` matrix-vector product can be
/// replaced with.
#[derive(Debug, Clone, PartialEq)]
pub enum CompressedLinear<T = f64> {
    Dense(DenseMatrix<T>),
    Svd(SvdLinear<T>),
    /// `S D_g x`: the shuffle follows the block-diagonal product.
    LgpShuffle {
        lgp: BlockDiagonal<T>,
        shuffle: ShuffleMix,
    },
    /// `M D_g x` (`After`) or `D_g M x` (`Before`).
    LgpDense {
        lgp: BlockDiagonal<T>,
        mix: DenseMatrix<T>,
        side: MixSide,
    },
    LowRankLgp(LowRankLgp<T>),
}

/// Name and logical shape of one weight array of an operator. Block-diagonal
/// factors are shaped `[groups, block_rows, block_cols]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorLayout {
    pub name: &'static str,
    pub shape: Vec<usize>,
}

impl FactorLayout {
    fn dense(name: &'static str, rows: usize, cols: usize) -> Self {
        FactorLayout {
            name,
            shape: vec![rows, cols],
        }
    }

    fn blocks(name: &'static str, rows: usize, cols: usize, groups: usize) -> Self {
        FactorLayout {
            name,
            shape: vec![groups, rows / groups, cols / groups],
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inputs feeding each output of this factor.
    pub fn fan_in(&self) -> usize {
        *self.shape.last().unwrap()
    }
}

/// Weight arrays of a validated config, in storage and initialization order.
pub fn factor_layout(cfg: &CompressionConfig) -> Result<Vec<FactorLayout>, ConfigError> {
    cfg.validate()?;
    let (m, n) = (cfg.m, cfg.n);
    Ok(match cfg.kind {
        OperatorKind::Dense => vec![FactorLayout::dense("weight", m, n)],
        OperatorKind::Svd => {
            let k = cfg.rank().unwrap();
            vec![FactorLayout::dense("q", k, n), FactorLayout::dense("p", m, k)]
        }
        OperatorKind::LgpShuffle => vec![FactorLayout::blocks("blocks", m, n, cfg.g.unwrap())],
        OperatorKind::LgpDense => {
            let s = cfg.mix_size().unwrap();
            vec![
                FactorLayout::blocks("blocks", m, n, cfg.g.unwrap()),
                FactorLayout::dense("mix", s, s),
            ]
        }
        OperatorKind::LowRankLgp => {
            let k = cfg.rank().unwrap();
            vec![
                FactorLayout::blocks("d_in", k, n, cfg.g_in.unwrap()),
                FactorLayout::dense("m_r", k, k),
                FactorLayout::blocks("d_out", m, k, cfg.g_out.unwrap()),
            ]
        }
    })
}

impl<T: Scalar> CompressedLinear<T> {
    /// Builds an operator from its weight arrays, given in [`factor_layout`]
    /// order.
    pub fn from_factors(cfg: &CompressionConfig, factors: Vec<Vec<T>>) -> Result<Self, ConfigError> {
        let layout = factor_layout(cfg)?;
        if factors.len() != layout.len() {
            return Err(ConfigError::Invalid(format!(
                "{} expects {} factor arrays, got {}",
                cfg.kind,
                layout.len(),
                factors.len()
            )));
        }
        for (l, f) in layout.iter().zip(&factors) {
            if f.len() != l.len() {
                return Err(ConfigError::FactorSize {
                    field: l.name.into(),
                    expected: l.len(),
                    found: f.len(),
                });
            }
        }
        let (m, n) = (cfg.m, cfg.n);
        let mut it = factors.into_iter();
        let mut next = || it.next().unwrap();
        let op = match cfg.kind {
            OperatorKind::Dense => CompressedLinear::Dense(DenseMatrix::from_vec(m, n, next())?),
            OperatorKind::Svd => {
                let k = cfg.rank().unwrap();
                let q = DenseMatrix::from_vec(k, n, next())?;
                let p = DenseMatrix::from_vec(m, k, next())?;
                CompressedLinear::Svd(SvdLinear {
                    rank_factor: cfg.r.unwrap(),
                    p,
                    q,
                })
            }
            OperatorKind::LgpShuffle => {
                let g = cfg.g.unwrap();
                CompressedLinear::LgpShuffle {
                    lgp: BlockDiagonal::new(m, n, g, next())?,
                    shuffle: ShuffleMix::new(m, g)?,
                }
            }
            OperatorKind::LgpDense => {
                let s = cfg.mix_size().unwrap();
                let lgp = BlockDiagonal::new(m, n, cfg.g.unwrap(), next())?;
                CompressedLinear::LgpDense {
                    lgp,
                    mix: DenseMatrix::from_vec(s, s, next())?,
                    side: cfg.effective_mix_side().unwrap(),
                }
            }
            OperatorKind::LowRankLgp => {
                let k = cfg.rank().unwrap();
                let d_in = BlockDiagonal::new(k, n, cfg.g_in.unwrap(), next())?;
                let m_r = DenseMatrix::from_vec(k, k, next())?;
                let d_out = BlockDiagonal::new(m, k, cfg.g_out.unwrap(), next())?;
                CompressedLinear::LowRankLgp(LowRankLgp {
                    rank_factor: cfg.r.unwrap(),
                    d_in,
                    m_r,
                    d_out,
                })
            }
        };
        op.validate()?;
        Ok(op)
    }

    /// Seeded initialization: every factor drawn i.i.d. uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` of that factor.
    pub fn init(cfg: &CompressionConfig, seed: u64) -> Result<Self, ConfigError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(cfg, &mut rng)
    }

    pub fn init_with_rng<R: rand::Rng>(cfg: &CompressionConfig, rng: &mut R) -> Result<Self, ConfigError> {
        let factors = factor_layout(cfg)?
            .iter()
            .map(|l| {
                let bound = 1.0 / (l.fan_in() as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                (0..l.len())
                    .map(|_| T::from_f64(dist.sample(rng)).unwrap())
                    .collect()
            })
            .collect();
        Self::from_factors(cfg, factors)
    }

    pub fn kind(&self) -> OperatorKind {
        match self {
            CompressedLinear::Dense(_) => OperatorKind::Dense,
            CompressedLinear::Svd(_) => OperatorKind::Svd,
            CompressedLinear::LgpShuffle { .. } => OperatorKind::LgpShuffle,
            CompressedLinear::LgpDense { .. } => OperatorKind::LgpDense,
            CompressedLinear::LowRankLgp(_) => OperatorKind::LowRankLgp,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            CompressedLinear::Dense(a) => a.rows(),
            CompressedLinear::Svd(s) => s.p.rows(),
            CompressedLinear::LgpShuffle { lgp, .. } | CompressedLinear::LgpDense { lgp, .. } => {
                lgp.out_dim()
            }
            CompressedLinear::LowRankLgp(l) => l.d_out.out_dim(),
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            CompressedLinear::Dense(a) => a.cols(),
            CompressedLinear::Svd(s) => s.q.cols(),
            CompressedLinear::LgpShuffle { lgp, .. } | CompressedLinear::LgpDense { lgp, .. } => lgp.in_dim(),
            CompressedLinear::LowRankLgp(l) => l.d_in.in_dim(),
        }
    }

    pub fn config(&self) -> CompressionConfig {
        let (m, n) = (self.out_dim(), self.in_dim());
        match self {
            CompressedLinear::Dense(_) => CompressionConfig::dense(m, n),
            CompressedLinear::Svd(s) => CompressionConfig::svd(m, n, s.rank_factor),
            CompressedLinear::LgpShuffle { lgp, .. } => CompressionConfig::lgp_shuffle(m, n, lgp.groups()),
            CompressedLinear::LgpDense { lgp, side, .. } => {
                let cfg = CompressionConfig::lgp_dense(m, n, lgp.groups());
                if *side == MixSide::auto(m, n) {
                    cfg
                } else {
                    cfg.with_mix_side(*side)
                }
            }
            CompressedLinear::LowRankLgp(l) => {
                CompressionConfig::low_rank_lgp(m, n, l.rank_factor, l.d_in.groups(), l.d_out.groups())
            }
        }
    }

    /// Checks divisibility, that every factor has the shape the config
    /// implies, and that all weights are finite.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let cfg = self.config();
        let layout = factor_layout(&cfg)?;
        let shapes_ok = match self {
            CompressedLinear::Svd(s) => {
                let k = cfg.rank().unwrap();
                s.q.rows() == k && s.p.cols() == k
            }
            CompressedLinear::LgpShuffle { lgp, shuffle } => {
                shuffle.len() == lgp.out_dim() && shuffle.groups() == lgp.groups()
            }
            CompressedLinear::LgpDense { mix, .. } => {
                let s = cfg.mix_size().unwrap();
                mix.rows() == s && mix.cols() == s
            }
            CompressedLinear::LowRankLgp(l) => {
                let k = cfg.rank().unwrap();
                l.d_in.out_dim() == k && l.d_out.in_dim() == k && l.m_r.rows() == k && l.m_r.cols() == k
            }
            CompressedLinear::Dense(_) => true,
        };
        if !shapes_ok {
            return Err(ConfigError::Invalid(format!(
                "{} factors disagree with dimensions {}x{}",
                cfg.kind, cfg.m, cfg.n
            )));
        }
        for (l, data) in layout.iter().zip(self.factors()) {
            if data.len() != l.len() {
                return Err(ConfigError::FactorSize {
                    field: l.name.into(),
                    expected: l.len(),
                    found: data.len(),
                });
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(ConfigError::NonFinite { field: l.name.into() });
            }
        }
        Ok(())
    }

    /// Weight arrays in [`factor_layout`] order.
    pub fn factors(&self) -> Vec<&[T]> {
        match self {
            CompressedLinear::Dense(a) => vec![a.as_slice()],
            CompressedLinear::Svd(s) => vec![s.q.as_slice(), s.p.as_slice()],
            CompressedLinear::LgpShuffle { lgp, .. } => vec![lgp.weights()],
            CompressedLinear::LgpDense { lgp, mix, .. } => vec![lgp.weights(), mix.as_slice()],
            CompressedLinear::LowRankLgp(l) => {
                vec![l.d_in.weights(), l.m_r.as_slice(), l.d_out.weights()]
            }
        }
    }

    pub fn factors_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            CompressedLinear::Dense(a) => vec![a.as_mut_slice()],
            CompressedLinear::Svd(s) => vec![s.q.as_mut_slice(), s.p.as_mut_slice()],
            CompressedLinear::LgpShuffle { lgp, .. } => vec![lgp.weights_mut()],
            CompressedLinear::LgpDense { lgp, mix, .. } => {
                vec![lgp.weights_mut(), mix.as_mut_slice()]
            }
            CompressedLinear::LowRankLgp(l) => {
                vec![l.d_in.weights_mut(), l.m_r.as_mut_slice(), l.d_out.weights_mut()]
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.factors().iter().map(|f| f.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> CompressedLinear<U> {
        match self {
            CompressedLinear::Dense(a) => CompressedLinear::Dense(a.cast()),
            CompressedLinear::Svd(s) => CompressedLinear::Svd(SvdLinear {
                rank_factor: s.rank_factor,
                p: s.p.cast(),
                q: s.q.cast(),
            }),
            CompressedLinear::LgpShuffle { lgp, shuffle } => CompressedLinear::LgpShuffle {
                lgp: lgp.cast(),
                shuffle: *shuffle,
            },
            CompressedLinear::LgpDense { lgp, mix, side } => CompressedLinear::LgpDense {
                lgp: lgp.cast(),
                mix: mix.cast(),
                side: *side,
            },
            CompressedLinear::LowRankLgp(l) => CompressedLinear::LowRankLgp(LowRankLgp {
                rank_factor: l.rank_factor,
                d_in: l.d_in.cast(),
                m_r: l.m_r.cast(),
                d_out: l.d_out.cast(),
            }),
        }
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>, ShapeError> {
        self.apply_with(x, Exec::Serial)
    }

    /// Applies the variant's factors right to left.
    pub fn apply_with(&self, x: &[T], exec: Exec) -> Result<Vec<T>, ShapeError> {
        ShapeError::check("operator input", self.in_dim(), x.len())?;
        let mut y = vec![T::zero(); self.out_dim()];
        match self {
            CompressedLinear::Dense(a) => gemv(a.rows(), a.cols(), a.as_slice(), x, &mut y),
            CompressedLinear::Svd(s) => {
                let u = dense_mv(&s.q, x);
                gemv(s.p.rows(), s.p.cols(), s.p.as_slice(), &u, &mut y);
            }
            CompressedLinear::LgpShuffle { lgp, shuffle } => {
                let mut v = vec![T::zero(); lgp.out_dim()];
                lgp.mv_into(x, &mut v, exec);
                shuffle.apply_into(&v, &mut y);
            }
            CompressedLinear::LgpDense { lgp, mix, side } => match side {
                MixSide::After => {
                    let mut v = vec![T::zero(); lgp.out_dim()];
                    lgp.mv_into(x, &mut v, exec);
                    gemv(mix.rows(), mix.cols(), mix.as_slice(), &v, &mut y);
                }
                MixSide::Before => {
                    let u = dense_mv(mix, x);
                    lgp.mv_into(&u, &mut y, exec);
                }
            },
            CompressedLinear::LowRankLgp(l) => {
                let mut u = vec![T::zero(); l.d_in.out_dim()];
                l.d_in.mv_into(x, &mut u, exec);
                let v = dense_mv(&l.m_r, &u);
                l.d_out.mv_into(&v, &mut y, exec);
            }
        }
        Ok(y)
    }

    /// Applies the operator to `batch` inputs stacked row-wise in `xs`
    /// (`batch x in_dim`), returning `batch x out_dim`. Output column `t` is
    /// bit-identical to `apply(&xs[t])`.
    pub fn apply_batch(&self, batch: usize, xs: &[T], exec: Exec) -> Result<Vec<T>, ShapeError> {
        ShapeError::check("operator batch input", batch * self.in_dim(), xs.len())?;
        Ok(match self {
            CompressedLinear::Dense(a) => dense_batch(a, batch, xs),
            CompressedLinear::Svd(s) => dense_batch(&s.p, batch, &dense_batch(&s.q, batch, xs)),
            CompressedLinear::LgpShuffle { lgp, shuffle } => {
                let v = lgp.mv_batch(batch, xs, exec);
                let m = lgp.out_dim();
                let mut y = vec![T::zero(); batch * m];
                for (src, dst) in v.chunks(m).zip(y.chunks_mut(m)) {
                    shuffle.apply_into(src, dst);
                }
                y
            }
            CompressedLinear::LgpDense { lgp, mix, side } => match side {
                MixSide::After => dense_batch(mix, batch, &lgp.mv_batch(batch, xs, exec)),
                MixSide::Before => lgp.mv_batch(batch, &dense_batch(mix, batch, xs), exec),
            },
            CompressedLinear::LowRankLgp(l) => {
                let u = l.d_in.mv_batch(batch, xs, exec);
                let v = dense_batch(&l.m_r, batch, &u);
                l.d_out.mv_batch(batch, &v, exec)
            }
        })
    }

    /// The explicit `m x n` matrix this operator represents.
    pub fn materialize(&self) -> DenseMatrix<T> {
        match self {
            CompressedLinear::Dense(a) => a.clone(),
            CompressedLinear::Svd(s) => s.p.matmul(&s.q).expect("validated shapes"),
            CompressedLinear::LgpShuffle { lgp, shuffle } => {
                // S D: row i of D lands on row target(i).
                let d = lgp.materialize();
                let mut out = DenseMatrix::zeros(d.rows(), d.cols());
                for i in 0..d.rows() {
                    let t = shuffle.target(i);
                    for j in 0..d.cols() {
                        out.set(t, j, d.get(i, j));
                    }
                }
                out
            }
            CompressedLinear::LgpDense { lgp, mix, side } => {
                let d = lgp.materialize();
                match side {
                    MixSide::After => mix.matmul(&d),
                    MixSide::Before => d.matmul(mix),
                }
                .expect("validated shapes")
            }
            CompressedLinear::LowRankLgp(l) => l
                .d_out
                .materialize()
                .matmul(&l.m_r)
                .and_then(|a| a.matmul(&l.d_in.materialize()))
                .expect("validated shapes"),
        }
    }
}

fn dense_mv<T: Scalar>(a: &DenseMatrix<T>, x: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); a.rows()];
    gemv(a.rows(), a.cols(), a.as_slice(), x, &mut y);
    y
}

fn dense_batch<T: Scalar>(a: &DenseMatrix<T>, batch: usize, xs: &[T]) -> Vec<T> {
    let mut ys = vec![T::zero(); batch * a.rows()];
    gemm_columns(a.rows(), a.cols(), a.as_slice(), batch, xs, &mut ys);
    ys
}

/// Applies `op` to `x`.
pub fn apply<T: Scalar>(op: &CompressedLinear<T>, x: &[T]) -> Result<Vec<T>, ShapeError> {
    op.apply(x)
}

pub fn materialize<T: Scalar>(op: &CompressedLinear<T>) -> DenseMatrix<T> {
    op.materialize()
}

pub fn validate<T: Scalar>(op: &CompressedLinear<T>) -> Result<(), ConfigError> {
    op.validate()
}

pub fn init_weights(cfg: &CompressionConfig, seed: u64) -> Result<CompressedLinear, ConfigError> {
    CompressedLinear::init(cfg, seed)
}
