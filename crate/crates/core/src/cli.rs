//! `antman` command line: `plan`, `verify`, `bench`, `train-kd`, `convert`.
//!
//! Exit codes: 0 success, 1 validation failure, 2 usage error.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{bench_run, format_ratio, BenchConfig, Precision, ThreadMode};
use crate::config::{OperatorKind, OperatorSpec};
use crate::costmodel::{plan, Rational};
use crate::error::Error;
use crate::rnn::SeqMode;
use crate::training::{run_kd_experiment, ExperimentConfig};
use crate::verify::run_oracle_suite;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "antman",
    version,
    about = "Compressed linear operators for RNN inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List configs reaching a target reduction, cheapest first.
    Plan(PlanArgs),
    /// Check random operators against their dense materialization.
    Verify(VerifyArgs),
    /// Time dense against compressed LSTMs.
    Bench(BenchArgs),
    /// Run the distillation experiment.
    TrainKd(TrainKdArgs),
    /// Dense-to-compressed model conversion (not supported).
    Convert {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, hide = true)]
        rest: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    /// Minimum reduction: an integer, a decimal or `num/den`.
    #[arg(long, value_parser = parse_rational)]
    target: Rational,
    /// Comma-separated kinds; all kinds when omitted.
    #[arg(long, value_delimiter = ',')]
    kinds: Vec<OperatorKind>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Print at most this many entries.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random configs per operator kind.
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, value_delimiter = ',')]
    kinds: Vec<OperatorKind>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ThreadsArg {
    Single,
    Multi,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Naive,
    Fused,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// JSON bench config; flags given alongside override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    /// Operator applied to both transforms, e.g. `lgp-shuffle:g=10`.
    /// Repeat for several.
    #[arg(long = "op")]
    ops: Vec<OperatorSpec>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long, value_enum)]
    threads: Option<ThreadsArg>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainKdArgs {
    /// Experiment config JSON; the built-in toy setup when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_rational(s: &str) -> Result<Rational, String> {
    let s = s.trim();
    let bad = || format!("'{s}' is not a nonnegative number");
    if let Some((a, b)) = s.split_once('/') {
        let (a, b): (u128, u128) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        if b == 0 {
            return Err("denominator is zero".into());
        }
        return Ok(Rational::new(a, b));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() || frac.len() > 30 {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let num: u128 = digits.parse().map_err(|_| bad())?;
    Ok(Rational::new(num, 10u128.pow(frac.len() as u32)))
}

fn kinds_or_all(kinds: Vec<OperatorKind>) -> Vec<OperatorKind> {
    if kinds.is_empty() {
        OperatorKind::ALL.to_vec()
    } else {
        kinds
    }
}

/// Parses `args` (program name first) and runs the command, writing normal
/// output to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Error> {
    match cmd {
        Command::Plan(a) => cmd_plan(a, out),
        Command::Verify(a) => cmd_verify(a, out),
        Command::Bench(a) => cmd_bench(a, out, err),
        Command::TrainKd(a) => cmd_train_kd(a, out, err),
        Command::Convert { .. } => {
            writeln!(
                err,
                "error: converting a dense model into a compressed one is not supported; \
                 train the compressed model directly (see `train-kd`)"
            )?;
            Ok(EXIT_USAGE)
        }
    }
}

fn cmd_plan(a: PlanArgs, out: &mut dyn Write) -> Result<i32, Error> {
    let mut entries = plan(a.m, a.n, a.target, &kinds_or_all(a.kinds))?;
    if let Some(limit) = a.limit {
        entries.truncate(limit);
    }
    match a.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&entries)?)?,
        Format::Table => {
            writeln!(
                out,
                "{:<28} {:>12} {:>12} {:>12}",
                "config", "params", "madds", "reduction"
            )?;
            for e in &entries {
                writeln!(
                    out,
                    "{:<28} {:>12} {:>12} {:>12}",
                    e.config.spec().to_string(),
                    e.cost.params,
                    e.cost.madds,
                    format_ratio(&e.cost.reduction)
                )?;
            }
            if entries.is_empty() {
                writeln!(out, "no config of the requested kinds reaches the target")?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn cmd_verify(a: VerifyArgs, out: &mut dyn Write) -> Result<i32, Error> {
    if a.cases == 0 {
        writeln!(out, "0 cases requested; nothing verified")?;
        return Ok(EXIT_OK);
    }
    let report = run_oracle_suite(a.seed, a.cases, &kinds_or_all(a.kinds))?;
    for k in &report.kinds {
        writeln!(
            out,
            "{:<12} {:>5} cases  worst rel err {:.3e}",
            k.kind.name(),
            k.cases,
            k.worst_rel_err
        )?;
    }
    let failures: Vec<_> = report.failures().collect();
    for f in &failures {
        writeln!(out, "FAIL {} rel err {:.3e}", f.config, f.max_rel_err)?;
    }
    if failures.is_empty() {
        writeln!(
            out,
            "ok: {} cases within {:e}",
            report.cases.len(),
            report.tolerance
        )?;
        Ok(EXIT_OK)
    } else {
        writeln!(out, "{} of {} cases failed", failures.len(), report.cases.len())?;
        Ok(EXIT_FAILURE)
    }
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Error> {
    let mut cfg = match &a.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => BenchConfig::default(),
    };
    if !a.dims.is_empty() {
        cfg.dims = a.dims;
    }
    if !a.ops.is_empty() {
        cfg.configs = a.ops;
    }
    if let Some(v) = a.seq_len {
        cfg.seq_len = v;
    }
    if let Some(v) = a.repetitions {
        cfg.repetitions = v;
    }
    if let Some(v) = a.warmup {
        cfg.warmup = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(t) = a.threads {
        cfg.threads = match t {
            ThreadsArg::Single => ThreadMode::Single,
            ThreadsArg::Multi => ThreadMode::Multi,
        };
    }
    if let Some(p) = a.precision {
        cfg.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    if let Some(m) = a.mode {
        cfg.mode = match m {
            ModeArg::Naive => SeqMode::Naive,
            ModeArg::Fused => SeqMode::Fused,
        };
    }
    let report = bench_run(&cfg)?;
    for w in &report.warnings {
        writeln!(err, "warning: {w}")?;
    }
    let csv = report.to_csv();
    match &a.csv {
        Some(path) => fs::write(path, &csv)?,
        None => out.write_all(csv.as_bytes())?,
    }
    if let Some(path) = &a.json {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(EXIT_OK)
}

fn cmd_train_kd(a: TrainKdArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Error> {
    let cfg: ExperimentConfig = match &a.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => ExperimentConfig::toy_default(),
    };
    let report = run_kd_experiment(&cfg)?;
    let s = &report.summary;
    writeln!(
        err,
        "val CE (median of {} seeds): teacher {:.4}, target {:.4}, mse {:.4}, kl {:.4}, combined {:.4} ({:.3}x best single)",
        report.seeds.len(),
        s.teacher_val_ce,
        s.target_only_val_ce,
        s.mse_only_val_ce,
        s.kl_only_val_ce,
        s.combined_val_ce,
        s.combined_ratio
    )?;
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(path) => fs::write(path, json)?,
        None => writeln!(out, "{json}")?,
    }
    Ok(EXIT_OK)
}
