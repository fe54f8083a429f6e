//! Randomized oracle check: every compressed operator must agree with the
//! dense matrix it materializes to.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CompressionConfig, MixSide, OperatorKind};
use crate::error::Error;
use crate::linalg::{max_rel_err, mv_dense};
use crate::operators::CompressedLinear;

/// Largest `m` or `n` drawn.
pub const MAX_DIM: usize = 64;
/// Inputs applied to each drawn operator.
pub const INPUTS_PER_CASE: usize = 10;
/// Bound on the normwise relative error against the dense product.
pub const ORACLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub config: CompressionConfig,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub kind: OperatorKind,
    pub cases: usize,
    pub worst_rel_err: f64,
    pub worst_config: Option<CompressionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub tolerance: f64,
    pub kinds: Vec<KindSummary>,
    pub cases: Vec<CaseResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.max_rel_err < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases
            .iter()
            .filter(|c| c.max_rel_err.is_nan() || c.max_rel_err >= self.tolerance)
    }
}

fn pick<R: Rng>(rng: &mut R, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

/// Draws a valid config of `kind` with `m, n <= MAX_DIM`.
pub fn random_config<R: Rng>(kind: OperatorKind, rng: &mut R) -> CompressionConfig {
    match kind {
        OperatorKind::Dense => CompressionConfig::dense(pick(rng, 1, MAX_DIM), pick(rng, 1, MAX_DIM)),
        OperatorKind::Svd => {
            let r = pick(rng, 1, 8);
            let n = r * pick(rng, 1, MAX_DIM / r);
            CompressionConfig::svd(pick(rng, 1, MAX_DIM), n, r)
        }
        OperatorKind::LgpShuffle | OperatorKind::LgpDense => {
            let g = pick(rng, 1, 8);
            let m = g * pick(rng, 1, MAX_DIM / g);
            let n = g * pick(rng, 1, MAX_DIM / g);
            if kind == OperatorKind::LgpShuffle {
                CompressionConfig::lgp_shuffle(m, n, g)
            } else {
                let cfg = CompressionConfig::lgp_dense(m, n, g);
                // Exercise the non-default side now and then.
                match rng.gen_range(0..4) {
                    0 => cfg.with_mix_side(MixSide::Before),
                    1 => cfg.with_mix_side(MixSide::After),
                    _ => cfg,
                }
            }
        }
        OperatorKind::LowRankLgp => {
            let g_in = pick(rng, 1, 4);
            let g_out = pick(rng, 1, 4);
            let l = lcm(g_in, g_out);
            let k = l * pick(rng, 1, (MAX_DIM / 2) / l);
            let r = pick(rng, 1, MAX_DIM / k);
            let m = g_out * pick(rng, 1, MAX_DIM / g_out);
            CompressionConfig::low_rank_lgp(m, k * r, r, g_in, g_out)
        }
    }
}

/// Normwise relative error of `apply` against the materialized dense
/// product, maximized over `inputs` random vectors in `[-1, 1]`.
pub fn check_operator<R: Rng>(op: &CompressedLinear, inputs: usize, rng: &mut R) -> Result<f64, Error> {
    let dense = op.materialize();
    let u = Uniform::new_inclusive(-1.0, 1.0);
    let mut worst = 0.0f64;
    for _ in 0..inputs {
        let x: Vec<f64> = (0..op.in_dim()).map(|_| u.sample(rng)).collect();
        let got = op.apply(&x)?;
        let want = mv_dense(&dense, &x)?;
        worst = worst.max(max_rel_err(&got, &want));
    }
    Ok(worst)
}

/// Runs `cases` random configs of each kind in `kinds`.
pub fn run_oracle_suite(seed: u64, cases: usize, kinds: &[OperatorKind]) -> Result<VerifyReport, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = VerifyReport {
        seed,
        tolerance: ORACLE_TOL,
        kinds: Vec::with_capacity(kinds.len()),
        cases: Vec::with_capacity(cases * kinds.len()),
    };
    for &kind in kinds {
        let mut summary = KindSummary {
            kind,
            cases,
            worst_rel_err: 0.0,
            worst_config: None,
        };
        for _ in 0..cases {
            let config = random_config(kind, &mut rng);
            let op = CompressedLinear::init(&config, rng.gen())?;
            let err = check_operator(&op, INPUTS_PER_CASE, &mut rng)?;
            if summary.worst_config.is_none() || err > summary.worst_rel_err {
                summary.worst_rel_err = err;
                summary.worst_config = Some(config);
            }
            report.cases.push(CaseResult {
                config,
                max_rel_err: err,
            });
        }
        report.kinds.push(summary);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_configs_are_valid_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in OperatorKind::ALL {
            for _ in 0..500 {
                let cfg = random_config(kind, &mut rng);
                cfg.validate().unwrap();
                assert!(cfg.m <= MAX_DIM && cfg.n <= MAX_DIM, "{cfg}");
            }
        }
    }

    #[test]
    fn suite_passes_and_is_deterministic() {
        let a = run_oracle_suite(5, 10, &OperatorKind::ALL).unwrap();
        assert!(a.passed());
        assert_eq!(a.cases.len(), 50);
        assert_eq!(a, run_oracle_suite(5, 10, &OperatorKind::ALL).unwrap());
    }

    #[test]
    fn zero_cases_is_an_empty_pass() {
        let r = run_oracle_suite(0, 0, &OperatorKind::ALL).unwrap();
        assert!(r.passed());
        assert!(r.cases.is_empty());
    }
}
