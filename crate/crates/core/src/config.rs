//! Operator configurations: which compressed form to use for an `m x n`
//! matrix-vector product and with which group / rank factors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Dense,
    Svd,
    LgpShuffle,
    LgpDense,
    LowRankLgp,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 5] = [
        OperatorKind::Dense,
        OperatorKind::Svd,
        OperatorKind::LgpShuffle,
        OperatorKind::LgpDense,
        OperatorKind::LowRankLgp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Dense => "dense",
            OperatorKind::Svd => "svd",
            OperatorKind::LgpShuffle => "lgp-shuffle",
            OperatorKind::LgpDense => "lgp-dense",
            OperatorKind::LowRankLgp => "lowrank-lgp",
        }
    }

    /// Number of weight-carrying factor matrices (the shuffle permutation
    /// carries none).
    pub fn factor_count(self) -> usize {
        match self {
            OperatorKind::Dense | OperatorKind::LgpShuffle => 1,
            OperatorKind::Svd | OperatorKind::LgpDense => 2,
            OperatorKind::LowRankLgp => 3,
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "dense" => Ok(OperatorKind::Dense),
            "svd" => Ok(OperatorKind::Svd),
            "lgp-shuffle" => Ok(OperatorKind::LgpShuffle),
            "lgp-dense" => Ok(OperatorKind::LgpDense),
            "lowrank-lgp" | "low-rank-lgp" => Ok(OperatorKind::LowRankLgp),
            other => Err(ConfigError::Invalid(format!("unknown operator kind '{other}'"))),
        }
    }
}

/// Where the dense mix of an LGP-Dense operator sits relative to the
/// block-diagonal product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixSide {
    /// `D_g M x`: mix of size `n` on the input.
    Before,
    /// `M D_g x`: mix of size `m` on the output.
    After,
}

impl MixSide {
    /// Mixes on the smaller dimension; ties go to `After`.
    pub fn auto(m: usize, n: usize) -> MixSide {
        if n < m {
            MixSide::Before
        } else {
            MixSide::After
        }
    }
}

/// A fully dimensioned compression configuration for one `m x n` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub kind: OperatorKind,
    pub m: usize,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_in: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_out: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix_side: Option<MixSide>,
}

fn need(kind: &'static str, field: &'static str, v: Option<usize>) -> Result<usize, ConfigError> {
    match v {
        None => Err(ConfigError::MissingParameter { kind, field }),
        Some(0) => Err(ConfigError::Zero { field }),
        Some(v) => Ok(v),
    }
}

impl CompressionConfig {
    fn base(kind: OperatorKind, m: usize, n: usize) -> Self {
        CompressionConfig {
            kind,
            m,
            n,
            g: None,
            r: None,
            g_in: None,
            g_out: None,
            mix_side: None,
        }
    }

    pub fn dense(m: usize, n: usize) -> Self {
        Self::base(OperatorKind::Dense, m, n)
    }

    pub fn svd(m: usize, n: usize, r: usize) -> Self {
        CompressionConfig {
            r: Some(r),
            ..Self::base(OperatorKind::Svd, m, n)
        }
    }

    pub fn lgp_shuffle(m: usize, n: usize, g: usize) -> Self {
        CompressionConfig {
            g: Some(g),
            ..Self::base(OperatorKind::LgpShuffle, m, n)
        }
    }

    pub fn lgp_dense(m: usize, n: usize, g: usize) -> Self {
        CompressionConfig {
            g: Some(g),
            ..Self::base(OperatorKind::LgpDense, m, n)
        }
    }

    pub fn low_rank_lgp(m: usize, n: usize, r: usize, g_in: usize, g_out: usize) -> Self {
        CompressionConfig {
            r: Some(r),
            g_in: Some(g_in),
            g_out: Some(g_out),
            ..Self::base(OperatorKind::LowRankLgp, m, n)
        }
    }

    pub fn with_mix_side(mut self, side: MixSide) -> Self {
        self.mix_side = Some(side);
        self
    }

    /// Checks every divisibility constraint the kind implies and returns the
    /// first violation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.m == 0 {
            return Err(ConfigError::Zero { field: "m" });
        }
        if self.n == 0 {
            return Err(ConfigError::Zero { field: "n" });
        }
        let kind = self.kind.name();
        match self.kind {
            OperatorKind::Dense => {}
            OperatorKind::Svd => {
                let r = need(kind, "r", self.r)?;
                if !self.n.is_multiple_of(r) {
                    return Err(ConfigError::divides("r", "n"));
                }
            }
            OperatorKind::LgpShuffle | OperatorKind::LgpDense => {
                let g = need(kind, "g", self.g)?;
                if !self.m.is_multiple_of(g) {
                    return Err(ConfigError::divides("g", "m"));
                }
                if !self.n.is_multiple_of(g) {
                    return Err(ConfigError::divides("g", "n"));
                }
            }
            OperatorKind::LowRankLgp => {
                let r = need(kind, "r", self.r)?;
                let g_in = need(kind, "g_in", self.g_in)?;
                let g_out = need(kind, "g_out", self.g_out)?;
                if !self.n.is_multiple_of(r) {
                    return Err(ConfigError::divides("r", "n"));
                }
                let rank = self.n / r;
                if !self.n.is_multiple_of(g_in) {
                    return Err(ConfigError::divides("g_in", "n"));
                }
                if !rank.is_multiple_of(g_in) {
                    return Err(ConfigError::divides("g_in", "n/r"));
                }
                if !self.m.is_multiple_of(g_out) {
                    return Err(ConfigError::divides("g_out", "m"));
                }
                if !rank.is_multiple_of(g_out) {
                    return Err(ConfigError::divides("g_out", "n/r"));
                }
            }
        }
        Ok(())
    }

    /// Side of the dense mix for LGP-Dense; `None` for other kinds.
    pub fn effective_mix_side(&self) -> Option<MixSide> {
        (self.kind == OperatorKind::LgpDense)
            .then(|| self.mix_side.unwrap_or_else(|| MixSide::auto(self.m, self.n)))
    }

    /// Width of the dense mix for LGP-Dense.
    pub fn mix_size(&self) -> Option<usize> {
        self.effective_mix_side().map(|side| match side {
            MixSide::After => self.m,
            MixSide::Before => self.n,
        })
    }

    /// Bottleneck width `n / r` for the low-rank kinds.
    pub fn rank(&self) -> Option<usize> {
        match self.kind {
            OperatorKind::Svd | OperatorKind::LowRankLgp => self.r.map(|r| self.n / r),
            _ => None,
        }
    }

    /// The dimension-free part of this config.
    pub fn spec(&self) -> OperatorSpec {
        OperatorSpec {
            kind: self.kind,
            g: self.g,
            r: self.r,
            g_in: self.g_in,
            g_out: self.g_out,
            mix_side: self.mix_side,
        }
    }
}

impl fmt::Display for CompressionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{} {}", self.m, self.n, self.spec())
    }
}

/// A compression recipe without dimensions, written as
/// `kind[:key=value,...]`, e.g. `lgp-shuffle:g=10` or `lowrank-lgp:r=2,g=2`.
/// For `lowrank-lgp`, `g` sets both `g_in` and `g_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub g: Option<usize>,
    pub r: Option<usize>,
    pub g_in: Option<usize>,
    pub g_out: Option<usize>,
    pub mix_side: Option<MixSide>,
}

impl OperatorSpec {
    pub fn dense() -> Self {
        CompressionConfig::dense(1, 1).spec()
    }

    pub fn at(&self, m: usize, n: usize) -> CompressionConfig {
        CompressionConfig {
            kind: self.kind,
            m,
            n,
            g: self.g,
            r: self.r,
            g_in: self.g_in,
            g_out: self.g_out,
            mix_side: self.mix_side,
        }
    }
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.name())?;
        let mut parts = Vec::new();
        if let Some(r) = self.r {
            parts.push(format!("r={r}"));
        }
        let shared = self
            .g_in
            .filter(|_| self.kind == OperatorKind::LowRankLgp && self.g_in == self.g_out);
        if let Some(g) = shared {
            parts.push(format!("g={g}"));
        } else {
            if let Some(g) = self.g {
                parts.push(format!("g={g}"));
            }
            if let Some(g) = self.g_in {
                parts.push(format!("g_in={g}"));
            }
            if let Some(g) = self.g_out {
                parts.push(format!("g_out={g}"));
            }
        }
        if let Some(side) = self.mix_side {
            parts.push(match side {
                MixSide::Before => "mix=before".to_string(),
                MixSide::After => "mix=after".to_string(),
            });
        }
        if !parts.is_empty() {
            write!(f, ":{}", parts.join(","))?;
        }
        Ok(())
    }
}

impl FromStr for OperatorSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, params) = match s.split_once(':') {
            Some((k, p)) => (k, p),
            None => (s, ""),
        };
        let kind: OperatorKind = kind.parse()?;
        let mut spec = OperatorSpec {
            kind,
            g: None,
            r: None,
            g_in: None,
            g_out: None,
            mix_side: None,
        };
        for part in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| ConfigError::Invalid(format!("expected key=value, got '{part}'")))?;
            if key.trim() == "mix" {
                spec.mix_side = Some(match value.trim() {
                    "before" => MixSide::Before,
                    "after" => MixSide::After,
                    v => return Err(ConfigError::Invalid(format!("unknown mix side '{v}'"))),
                });
                continue;
            }
            let v: usize = value
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("'{value}' is not a positive integer")))?;
            match (key.trim(), kind) {
                ("g", OperatorKind::LowRankLgp) => {
                    spec.g_in = Some(v);
                    spec.g_out = Some(v);
                }
                ("g", _) => spec.g = Some(v),
                ("r", _) => spec.r = Some(v),
                ("g_in", _) => spec.g_in = Some(v),
                ("g_out", _) => spec.g_out = Some(v),
                (k, _) => return Err(ConfigError::Invalid(format!("unknown parameter '{k}'"))),
            }
        }
        Ok(spec)
    }
}

impl Serialize for OperatorSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OperatorSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_must_divide_m() {
        let err = CompressionConfig::lgp_shuffle(10, 4, 3).validate().unwrap_err();
        assert_eq!(err.to_string(), "g must divide m");
    }

    #[test]
    fn worked_example_low_rank_is_valid() {
        CompressionConfig::low_rank_lgp(1000, 400, 4, 10, 10)
            .validate()
            .unwrap();
    }

    #[test]
    fn r_must_divide_n() {
        let err = CompressionConfig::svd(400, 400, 7).validate().unwrap_err();
        assert_eq!(err.to_string(), "r must divide n");
        let err = CompressionConfig::low_rank_lgp(400, 400, 7, 1, 1)
            .validate()
            .unwrap_err();
        assert_eq!(err.to_string(), "r must divide n");
    }

    #[test]
    fn low_rank_group_constraints() {
        // n/r = 6: g_in = 4 divides n = 12 but not n/r.
        let err = CompressionConfig::low_rank_lgp(8, 12, 2, 4, 1)
            .validate()
            .unwrap_err();
        assert_eq!(err.to_string(), "g_in must divide n/r");
        let err = CompressionConfig::low_rank_lgp(9, 12, 2, 1, 2)
            .validate()
            .unwrap_err();
        assert_eq!(err.to_string(), "g_out must divide m");
        let err = CompressionConfig::low_rank_lgp(12, 12, 2, 1, 4)
            .validate()
            .unwrap_err();
        assert_eq!(err.to_string(), "g_out must divide n/r");
    }

    #[test]
    fn missing_and_zero_parameters() {
        let mut cfg = CompressionConfig::lgp_shuffle(4, 4, 2);
        cfg.g = None;
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::MissingParameter { field: "g", .. })
        ));
        cfg.g = Some(0);
        assert_eq!(cfg.validate().unwrap_err().to_string(), "g must be positive");
        assert!(CompressionConfig::dense(0, 3).validate().is_err());
    }

    #[test]
    fn mix_side_follows_smaller_dimension() {
        assert_eq!(
            CompressionConfig::lgp_dense(6, 4, 2).effective_mix_side(),
            Some(MixSide::Before)
        );
        assert_eq!(
            CompressionConfig::lgp_dense(4, 6, 2).effective_mix_side(),
            Some(MixSide::After)
        );
        assert_eq!(
            CompressionConfig::lgp_dense(4, 4, 2).effective_mix_side(),
            Some(MixSide::After)
        );
        let forced = CompressionConfig::lgp_dense(6, 4, 2).with_mix_side(MixSide::After);
        assert_eq!(forced.mix_size(), Some(6));
    }

    #[test]
    fn spec_strings_parse_and_print() {
        let s: OperatorSpec = "lowrank-lgp:r=2,g=10".parse().unwrap();
        assert_eq!(s.g_in, Some(10));
        assert_eq!(s.g_out, Some(10));
        assert_eq!(s.to_string(), "lowrank-lgp:r=2,g=10");
        let s: OperatorSpec = "lgp-shuffle:g=4".parse().unwrap();
        assert_eq!(s.at(16, 8), CompressionConfig::lgp_shuffle(16, 8, 4));
        assert_eq!("dense".parse::<OperatorSpec>().unwrap().to_string(), "dense");
        assert!("lgp-shuffle:q=3".parse::<OperatorSpec>().is_err());
        assert!("conv".parse::<OperatorSpec>().is_err());
    }
}
