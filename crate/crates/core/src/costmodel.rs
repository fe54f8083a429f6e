//! Multiply-add and parameter counts for each operator kind, the closed-form
//! cost-reduction expressions, and a divisor-enumerating planner.
//!
//! For matrix-vector compositions every weight is used in exactly one
//! multiply-add per application, so `madds == params` throughout. All
//! arithmetic is exact: counts are integers and reductions are rationals.

use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

pub use crate::config::{CompressionConfig, MixSide, OperatorKind, OperatorSpec};
use crate::error::ConfigError;

pub type Rational = Ratio<u128>;

/// Cost of one application of a configured operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub madds: u64,
    pub params: u64,
    /// `m*n / params`.
    #[serde(with = "rational_serde")]
    pub reduction: Rational,
    /// Set when the "compressed" form is larger than the dense map.
    pub expands: bool,
}

impl CostReport {
    pub fn reduction_f64(&self) -> f64 {
        ratio_to_f64(&self.reduction)
    }
}

pub fn ratio_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Serializes a rational as `{"num": .., "den": .., "value": ..}`.
pub mod rational_serde {
    use super::{ratio_to_f64, Rational};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        num: u128,
        den: u128,
        #[serde(default)]
        value: f64,
    }

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        Repr {
            num: *r.numer(),
            den: *r.denom(),
            value: ratio_to_f64(r),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let repr = Repr::deserialize(d)?;
        if repr.den == 0 {
            return Err(serde::de::Error::custom("zero denominator"));
        }
        Ok(Rational::new(repr.num, repr.den))
    }
}

/// Parameter (= multiply-add) count of a validated config.
pub fn params_of(cfg: &CompressionConfig) -> Result<u64, ConfigError> {
    cfg.validate()?;
    let (m, n) = (cfg.m as u64, cfg.n as u64);
    Ok(match cfg.kind {
        OperatorKind::Dense => m * n,
        OperatorKind::Svd => {
            let r = cfg.r.unwrap() as u64;
            m * n / r + n * n / r
        }
        OperatorKind::LgpShuffle => m * n / cfg.g.unwrap() as u64,
        OperatorKind::LgpDense => {
            let s = cfg.mix_size().unwrap() as u64;
            m * n / cfg.g.unwrap() as u64 + s * s
        }
        OperatorKind::LowRankLgp => {
            let r = cfg.r.unwrap() as u64;
            let g_in = cfg.g_in.unwrap() as u64;
            let g_out = cfg.g_out.unwrap() as u64;
            let k = n / r;
            m * n / (r * g_out) + n * n / (r * g_in) + k * k
        }
    })
}

pub fn cost_of(cfg: &CompressionConfig) -> Result<CostReport, ConfigError> {
    let params = params_of(cfg)?;
    let dense = cfg.m as u128 * cfg.n as u128;
    let reduction = Rational::new(dense, params as u128);
    Ok(CostReport {
        madds: params,
        params,
        expands: reduction < Rational::from_integer(1),
        reduction,
    })
}

/// The cost-reduction column evaluated directly from its closed form, e.g.
/// `m r^2 g_out g_in / (m g_in r + n g_out r + n g_out g_in)` for
/// LowRank-LGP. For LGP-Dense the squared term uses the actual mix width,
/// which is `min(m, n)` unless the side was overridden.
pub fn reduction_closed_form(cfg: &CompressionConfig) -> Result<Rational, ConfigError> {
    cfg.validate()?;
    let (m, n) = (cfg.m as u128, cfg.n as u128);
    Ok(match cfg.kind {
        OperatorKind::Dense => Rational::from_integer(1),
        OperatorKind::Svd => {
            let r = cfg.r.unwrap() as u128;
            Rational::new(m * r, m + n)
        }
        OperatorKind::LgpShuffle => Rational::from_integer(cfg.g.unwrap() as u128),
        OperatorKind::LgpDense => {
            let g = cfg.g.unwrap() as u128;
            let s = cfg.mix_size().unwrap() as u128;
            Rational::from_integer(m * n) / (Rational::new(m * n, g) + Rational::from_integer(s * s))
        }
        OperatorKind::LowRankLgp => {
            let r = cfg.r.unwrap() as u128;
            let g_in = cfg.g_in.unwrap() as u128;
            let g_out = cfg.g_out.unwrap() as u128;
            Rational::new(
                m * r * r * g_out * g_in,
                m * g_in * r + n * g_out * r + n * g_out * g_in,
            )
        }
    })
}

/// Ascending divisors of `k`.
pub fn divisors(k: usize) -> Vec<usize> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= k {
        if k.is_multiple_of(d) {
            small.push(d);
            if d * d != k {
                large.push(k / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Every valid config of `kind` for an `m x n` map, with group and rank
/// factors ranging over the divisors that keep the config valid. LGP-Dense
/// uses the automatic mix side.
pub fn enumerate_configs(m: usize, n: usize, kind: OperatorKind) -> Vec<CompressionConfig> {
    if m == 0 || n == 0 {
        return Vec::new();
    }
    match kind {
        OperatorKind::Dense => vec![CompressionConfig::dense(m, n)],
        OperatorKind::Svd => divisors(n)
            .into_iter()
            .map(|r| CompressionConfig::svd(m, n, r))
            .collect(),
        OperatorKind::LgpShuffle => divisors(gcd(m, n))
            .into_iter()
            .map(|g| CompressionConfig::lgp_shuffle(m, n, g))
            .collect(),
        OperatorKind::LgpDense => divisors(gcd(m, n))
            .into_iter()
            .map(|g| CompressionConfig::lgp_dense(m, n, g))
            .collect(),
        OperatorKind::LowRankLgp => {
            let mut out = Vec::new();
            for r in divisors(n) {
                let k = n / r;
                for g_in in divisors(k) {
                    for g_out in divisors(gcd(m, k)) {
                        out.push(CompressionConfig::low_rank_lgp(m, n, r, g_in, g_out));
                    }
                }
            }
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub config: CompressionConfig,
    pub cost: CostReport,
}

/// All configs of the requested kinds whose reduction reaches `target`,
/// cheapest first; ties prefer fewer factor matrices, then kind order and
/// smaller factors.
pub fn plan(
    m: usize,
    n: usize,
    target: Rational,
    kinds: &[OperatorKind],
) -> Result<Vec<PlanEntry>, ConfigError> {
    if m == 0 {
        return Err(ConfigError::Zero { field: "m" });
    }
    if n == 0 {
        return Err(ConfigError::Zero { field: "n" });
    }
    if target < Rational::from_integer(1) {
        return Err(ConfigError::Invalid("target reduction must be at least 1".into()));
    }
    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();
    let mut entries = Vec::new();
    for kind in kinds {
        for config in enumerate_configs(m, n, kind) {
            let cost = cost_of(&config)?;
            if cost.reduction >= target {
                entries.push(PlanEntry { config, cost });
            }
        }
    }
    entries.sort_by_key(|e| {
        (
            e.cost.params,
            e.config.kind.factor_count(),
            e.config.kind,
            e.config.r,
            e.config.g,
            e.config.g_in,
            e.config.g_out,
        )
    });
    Ok(entries)
}
