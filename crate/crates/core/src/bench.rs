//! Latency harness: dense against compressed single-layer LSTMs at batch 1,
//! median of `k` timed sequence evaluations after `w` warmup runs.

use std::time::{Duration, Instant};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::OperatorSpec;
use crate::costmodel::{cost_of, ratio_to_f64, rational_serde, Rational};
use crate::error::{ConfigError, Error};
use crate::linalg::Scalar;
use crate::operators::{threads_from_env, Exec};
use crate::rnn::{model_bytes, LstmConfig, LstmModel, SeqMode};

pub const CSV_HEADER: &str = "dim,config,median_ns,theoretical_speedup,actual_speedup,model_bytes";
pub const REPORT_SCHEMA: &str = "antman.bench-report.v1";
/// Config id of the in-process dense reference row.
pub const BASELINE_ID: &str = "dense-baseline";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThreadMode {
    /// One core; the mode acceptance numbers are taken in.
    #[default]
    Single,
    /// Block products of each operator on the rayon pool.
    Multi,
}

impl ThreadMode {
    /// `ANTMAN_THREADS` takes precedence over the configured mode.
    pub fn resolve(self) -> Exec {
        match (threads_from_env(), self) {
            (Some(1), _) => Exec::Serial,
            (Some(_), _) => Exec::Parallel,
            (None, ThreadMode::Single) => Exec::Serial,
            (None, ThreadMode::Multi) => Exec::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Input and hidden size of each benchmarked LSTM.
    pub dims: Vec<usize>,
    pub seq_len: usize,
    /// Operators applied to both the input and hidden transforms.
    pub configs: Vec<OperatorSpec>,
    /// Timed runs per model; odd so the median is a sample.
    pub repetitions: usize,
    pub warmup: usize,
    pub threads: ThreadMode,
    pub precision: Precision,
    pub mode: SeqMode,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            dims: vec![100, 200, 400, 800, 1600],
            seq_len: 100,
            configs: [
                "lgp-shuffle:g=2",
                "lgp-shuffle:g=10",
                "lowrank-lgp:r=2,g=2",
                "lowrank-lgp:r=2,g=10",
            ]
            .iter()
            .map(|s| s.parse().expect("valid spec"))
            .collect(),
            repetitions: 9,
            warmup: 3,
            threads: ThreadMode::Single,
            precision: Precision::F32,
            mode: SeqMode::Naive,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.repetitions < 3 || self.repetitions.is_multiple_of(2) {
            return Err(ConfigError::Invalid(format!(
                "repetitions must be odd and at least 3, got {}",
                self.repetitions
            )));
        }
        if self.seq_len == 0 {
            return Err(ConfigError::Zero { field: "seq_len" });
        }
        if self.dims.is_empty() {
            return Err(ConfigError::Invalid("no dims to benchmark".into()));
        }
        for &d in &self.dims {
            if d == 0 {
                return Err(ConfigError::Zero { field: "dims" });
            }
            for spec in &self.configs {
                LstmConfig::uniform(d, 1, *spec)
                    .operator_configs()
                    .iter()
                    .try_for_each(|(i, h)| i.validate().and_then(|_| h.validate()))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub dim: usize,
    pub config: String,
    pub median_ns: u64,
    /// Dense multiply-adds over compressed ones, both transforms together.
    #[serde(with = "rational_serde")]
    pub theoretical_speedup: Rational,
    /// Dense median over this row's median.
    pub actual_speedup: f64,
    pub model_bytes: u64,
}

impl BenchResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.4},{}",
            self.dim,
            self.config,
            self.median_ns,
            format_ratio(&self.theoretical_speedup),
            self.actual_speedup,
            self.model_bytes
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub config: BenchConfig,
    pub timer_granularity_ns: u64,
    pub results: Vec<BenchResult>,
    pub warnings: Vec<String>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.results {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

/// Integers print bare, other ratios as `num/den`.
pub fn format_ratio(r: &Rational) -> String {
    if r.is_integer() {
        r.to_integer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// LSTM-level theoretical speedup of `spec` at input = hidden = `dim`.
pub fn theoretical_speedup(dim: usize, spec: &OperatorSpec) -> Result<Rational, ConfigError> {
    let dense = 2 * 4 * dim as u128 * dim as u128;
    let pairs = LstmConfig::uniform(dim, 1, *spec).operator_configs();
    let (input, hidden) = &pairs[0];
    let compressed = cost_of(input)?.madds as u128 + cost_of(hidden)?.madds as u128;
    Ok(Rational::new(dense, compressed))
}

/// Smallest nonzero step of the monotonic clock observed over a short probe.
pub fn timer_granularity() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let t0 = Instant::now();
        let mut t1 = Instant::now();
        while t1 == t0 {
            t1 = Instant::now();
        }
        best = best.min(t1 - t0);
    }
    best
}

fn median_ns(samples: &mut [u64]) -> u64 {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

fn measure<T: Scalar>(
    cfg: &BenchConfig,
    exec: Exec,
    granularity: Duration,
    warnings: &mut Vec<String>,
) -> Result<Vec<BenchResult>, Error> {
    let mut results = Vec::new();
    for &dim in &cfg.dims {
        let build = |spec: OperatorSpec, name: &str| -> Result<LstmModel<T>, Error> {
            let model = LstmModel::<f64>::init(name, &LstmConfig::uniform(dim, 1, spec), cfg.seed)?;
            Ok(model.cast())
        };
        let dense = build(OperatorSpec::dense(), BASELINE_ID)?;
        let candidates = cfg
            .configs
            .iter()
            .map(|s| build(*s, &s.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ dim as u64);
        let u = Uniform::new_inclusive(-1.0, 1.0);
        let xs: Vec<T> = (0..cfg.seq_len * dim)
            .map(|_| T::from_f64(u.sample(&mut rng)).unwrap())
            .collect();

        let models: Vec<&LstmModel<T>> = std::iter::once(&dense).chain(&candidates).collect();
        let run = |m: &LstmModel<T>| -> Result<u64, Error> {
            let t0 = Instant::now();
            let out = m.run_flat(cfg.seq_len, &xs, cfg.mode, exec)?;
            let ns = t0.elapsed().as_nanos() as u64;
            std::hint::black_box(out);
            Ok(ns)
        };
        for _ in 0..cfg.warmup {
            for m in &models {
                run(m)?;
            }
        }
        // Interleave models within each repetition so slow drift in clock
        // speed hits all of them alike.
        let mut samples = vec![Vec::with_capacity(cfg.repetitions); models.len()];
        for _ in 0..cfg.repetitions {
            for (m, s) in models.iter().zip(samples.iter_mut()) {
                s.push(run(m)?);
            }
        }
        let medians: Vec<u64> = samples.iter_mut().map(|s| median_ns(s)).collect();
        let base = medians[0].max(1);
        for (k, (m, &med)) in models.iter().zip(&medians).enumerate() {
            let (config, theoretical) = if k == 0 {
                (BASELINE_ID.to_string(), Rational::from_integer(1))
            } else {
                let spec = &cfg.configs[k - 1];
                (spec.to_string(), theoretical_speedup(dim, spec)?)
            };
            if (med as u128) < 100 * granularity.as_nanos() {
                warnings.push(format!(
                    "dim {dim} {config}: median {med} ns is under 100x the timer granularity ({} ns)",
                    granularity.as_nanos()
                ));
            }
            results.push(BenchResult {
                dim,
                config,
                median_ns: med,
                theoretical_speedup: theoretical,
                actual_speedup: base as f64 / med.max(1) as f64,
                model_bytes: model_bytes(m),
            });
        }
    }
    Ok(results)
}

/// Runs the benchmark grid. Measurements are strictly sequential; rows come
/// out dim by dim, baseline first, then configs in the order given.
pub fn bench_run(cfg: &BenchConfig) -> Result<BenchReport, Error> {
    cfg.validate()?;
    let exec = cfg.threads.resolve();
    let granularity = timer_granularity();
    let mut warnings = Vec::new();
    let results = match cfg.precision {
        Precision::F32 => measure::<f32>(cfg, exec, granularity, &mut warnings)?,
        Precision::F64 => measure::<f64>(cfg, exec, granularity, &mut warnings)?,
    };
    Ok(BenchReport {
        schema: REPORT_SCHEMA.to_string(),
        config: cfg.clone(),
        timer_granularity_ns: granularity.as_nanos() as u64,
        results,
        warnings,
    })
}

/// Convenience for printing a speedup column.
pub fn speedup_f64(r: &Rational) -> f64 {
    ratio_to_f64(r)
}
