//! Release acceptance criteria. Each test prints one `PASS`/`FAIL` line
//! straight to stdout (bypassing capture) and then asserts.
//!
//! The tests hold a shared lock so they run one at a time: the latency
//! criterion must not share the core with training.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use antman::bench::{bench_run, BenchConfig, Precision, ThreadMode, BASELINE_ID};
use antman::costmodel::{cost_of, enumerate_configs, reduction_closed_form, Rational};
use antman::linalg::max_rel_err;
use antman::rnn::{decode_metadata, decode_model, encode_model, load_model, save_model, FormatError};
use antman::rnn::{LayerConfig, LstmConfig, LstmModel, SeqMode};
use antman::training::{
    check_gradients, decide_coefficients, kd_step_loss, operator_on_tape, run_kd_experiment, Anchor,
    AutodiffError, ExperimentConfig, KdCoefficients, KlDirection, LossRecord, ModelSpec, NodeId,
    SequenceModel, Tape,
};
use antman::verify::{run_oracle_suite, ORACLE_TOL};
use antman::{CompressedLinear, CompressionConfig, Exec, MixSide, OperatorKind, OperatorSpec};

static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, name: &str, ok: bool, detail: &str, elapsed: Duration, budget: Duration) {
    let verdict = if ok && elapsed < budget { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{verdict} [{id}] {name}: {detail} ({:.2?}, budget {:?})",
        elapsed, budget
    );
    let _ = out.flush();
}

fn finish(id: u32, name: &str, ok: bool, detail: String, start: Instant, budget: Duration) {
    let elapsed = start.elapsed();
    report(id, name, ok, &detail, elapsed, budget);
    assert!(ok, "{name}: {detail}");
    assert!(elapsed < budget, "{name}: took {elapsed:?}, budget {budget:?}");
}

fn spec(s: &str) -> OperatorSpec {
    s.parse().unwrap()
}

#[test]
fn c1_cost_model_worked_example() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let cases = [
        (CompressionConfig::lgp_shuffle(1000, 400, 10), 40_000u64),
        (CompressionConfig::lgp_dense(1000, 400, 10), 200_000),
        (CompressionConfig::low_rank_lgp(1000, 400, 4, 10, 10), 24_000),
    ];
    let mut ok = true;
    let mut got = Vec::new();
    for (cfg, want) in &cases {
        let c = cost_of(cfg).unwrap();
        ok &= c.madds == *want && c.params == *want;
        ok &= c.reduction == Rational::new(400_000, *want as u128);
        got.push(format!("{}={}", cfg.kind, c.madds));
    }
    finish(
        1,
        "cost model worked example 1000x400",
        ok,
        got.join(" "),
        start,
        Duration::from_secs(1),
    );
}

#[test]
fn c2_closed_form_matches_cost_sweep() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut checked = 0usize;
    let mut mismatches = Vec::new();
    for m in 1..=120 {
        for n in 1..=120 {
            for kind in OperatorKind::ALL {
                for cfg in enumerate_configs(m, n, kind) {
                    let variants = if kind == OperatorKind::LgpDense {
                        vec![
                            cfg.with_mix_side(MixSide::After),
                            cfg.with_mix_side(MixSide::Before),
                        ]
                    } else {
                        vec![cfg]
                    };
                    for cfg in variants {
                        let closed = reduction_closed_form(&cfg).unwrap();
                        let counted = cost_of(&cfg).unwrap().reduction;
                        checked += 1;
                        if closed != counted && mismatches.len() < 5 {
                            mismatches.push(format!("{cfg}: {closed} vs {counted}"));
                        }
                    }
                }
            }
        }
    }
    finish(
        2,
        "closed-form reduction equals counted reduction, m,n <= 120",
        mismatches.is_empty() && checked > 0,
        format!("{checked} configs, mismatches {mismatches:?}"),
        start,
        Duration::from_secs(10),
    );
}

#[test]
fn c3_oracle_equivalence() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let r = run_oracle_suite(2024, 100, &OperatorKind::ALL).unwrap();
    let worst = r
        .kinds
        .iter()
        .map(|k| format!("{}={:.2e}", k.kind, k.worst_rel_err))
        .collect::<Vec<_>>();
    let ok = r.passed() && r.tolerance == ORACLE_TOL && ORACLE_TOL <= 1e-12 && r.cases.len() == 500;
    finish(
        3,
        "apply vs materialized dense, 100 configs per kind",
        ok,
        format!("worst {}", worst.join(" ")),
        start,
        Duration::from_secs(30),
    );
}

type Build = Box<dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId, AutodiffError>>;

fn ramp(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 + phase) * 0.7).sin() * 0.8).collect()
}

/// Every tape primitive, each feeding a scalar through a nonlinear head so
/// no gradient is trivially constant.
fn primitive_cases() -> Vec<(&'static str, Vec<Vec<f64>>, Build)> {
    fn head(t: &mut Tape, y: NodeId) -> NodeId {
        let s = t.tanh(y);
        let q = t.mul(s, s).unwrap();
        t.sum(q)
    }
    vec![
        (
            "matvec",
            vec![ramp(12 * 8, 0.0), ramp(8, 1.0)],
            Box::new(|t: &mut Tape, p: &[NodeId]| {
                let y = t.matvec(p[0], p[1], 12, 8)?;
                Ok(head(t, y))
            }) as Build,
        ),
        (
            "block_diag_mv",
            vec![ramp(12 * 8 / 4, 0.5), ramp(8, 2.0)],
            Box::new(|t: &mut Tape, p: &[NodeId]| {
                let y = t.block_diag_mv(p[0], p[1], 12, 8, 4)?;
                Ok(head(t, y))
            }),
        ),
        (
            "shuffle",
            vec![ramp(12, 0.3), ramp(12, 1.3)],
            Box::new(|t: &mut Tape, p: &[NodeId]| {
                let s = t.shuffle(p[0], 3)?;
                let y = t.mul(s, p[1])?;
                Ok(head(t, y))
            }),
        ),
        (
            "add",
            vec![ramp(6, 0.1), ramp(6, 3.0)],
            Box::new(|t: &mut Tape, p: &[NodeId]| {
                let y = t.add(p[0], p[1])?;
                Ok(head(t, y))
            }),
        ),
        (
            "mul",
            vec![ramp(6, 0.2), ramp(6, 2.2)],
            Box::new(|t: &mut Tape, p: &[NodeId]| {
                let y = t.mul(p[0], p[1])?;
                Ok(head(t, y))
            }),
        ),
        (
            "scale",
            vec![ramp(6, 0.4)],
            Box::new(|t: &mut Tape, p: &[NodeId]| {
                let y = t.scale(p[0], -1.7);
                Ok(head(t, y))
            }),
        ),
        (
            "sigmoid",
            vec![ramp(6, 0.6)],
            Box::new(|t: &mut Tape, p: &[NodeId]| {
                let y = t.sigmoid(p[0]);
                Ok(head(t, y))
            }),
        ),
        (
            "tanh",
            vec![ramp(6, 0.8)],
            Box::new(|t: &mut Tape, p: &[NodeId]| {
                let y = t.tanh(p[0]);
                Ok(head(t, y))
            }),
        ),
        (
            "softmax+log",
            vec![ramp(7, 0.9)],
            Box::new(|t: &mut Tape, p: &[NodeId]| {
                let s = t.softmax(p[0]);
                let l = t.log(s);
                let w = t.constant(ramp(7, 4.0));
                let y = t.mul(l, w)?;
                Ok(t.sum(y))
            }),
        ),
        (
            "slice",
            vec![ramp(10, 1.1)],
            Box::new(|t: &mut Tape, p: &[NodeId]| {
                let y = t.slice(p[0], 3, 5)?;
                Ok(head(t, y))
            }),
        ),
        (
            "mse",
            vec![ramp(8, 1.2), ramp(8, 5.0)],
            Box::new(|t: &mut Tape, p: &[NodeId]| t.mse(p[0], p[1])),
        ),
        (
            "kl",
            vec![ramp(8, 1.4), ramp(8, 2.4)],
            Box::new(|t: &mut Tape, p: &[NodeId]| {
                let a = t.softmax(p[0]);
                let b = t.softmax(p[1]);
                t.kl(a, b)
            }),
        ),
        (
            "cross_entropy",
            vec![ramp(8, 1.6)],
            Box::new(|t: &mut Tape, p: &[NodeId]| {
                let a = t.softmax(p[0]);
                t.cross_entropy(a, 5)
            }),
        ),
    ]
}

fn operator_specs() -> Vec<OperatorSpec> {
    [
        "dense",
        "svd:r=2",
        "lgp-shuffle:g=4",
        "lgp-dense:g=4,mix=after",
        "lgp-dense:g=4,mix=before",
        "lowrank-lgp:r=2,g=2",
        "lowrank-lgp:r=2,g_in=2,g_out=4",
    ]
    .iter()
    .map(|s| spec(s))
    .collect()
}

#[test]
fn c4_gradient_correctness() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut results: Vec<(String, f64)> = Vec::new();

    for (name, params, build) in primitive_cases() {
        let r = check_gradients(&params, |t, p| build(t, p)).unwrap();
        results.push((name.to_string(), r.max_rel_err));
    }

    // Operators in both orientations, m > n and m < n.
    for op in operator_specs() {
        for (m, n) in [(16, 8), (8, 16)] {
            let cfg = op.at(m, n);
            let w = CompressedLinear::<f64>::init(&cfg, 11).unwrap();
            let mut params: Vec<Vec<f64>> = w.factors().iter().map(|f| f.to_vec()).collect();
            params.push(ramp(n, 0.25));
            let x_index = params.len() - 1;
            let r = check_gradients(&params, |t, p| {
                let y = operator_on_tape(t, &cfg, &p[..x_index], p[x_index])?;
                let s = t.tanh(y);
                let q = t.mul(s, s)?;
                Ok(t.sum(q))
            })
            .unwrap();
            results.push((format!("{cfg}"), r.max_rel_err));
        }
    }

    // Full distillation objective through an LSTM sequence model.
    let coeffs = KdCoefficients::new(1.0, 3.0, 2.0).unwrap();
    for op in operator_specs() {
        let ms = ModelSpec::uniform(8, op);
        let model = SequenceModel::init(6, &ms, 4).unwrap();
        let tokens = [1usize, 4, 0, 5, 2];
        let teacher: Vec<Vec<f64>> = (0..4)
            .map(|k| {
                let raw: Vec<f64> = (0..6).map(|i| ((i * 3 + k) % 7) as f64 + 1.0).collect();
                let z: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / z).collect()
            })
            .collect();
        let r = check_gradients(&model.params, |t, p| {
            let outs = model.forward_on_tape(t, p, &tokens[..4])?;
            let mut total: Option<NodeId> = None;
            for (k, &o) in outs.iter().enumerate() {
                let tn = t.constant(teacher[k].clone());
                let l = kd_step_loss(
                    t,
                    o,
                    Some(tn),
                    tokens[k + 1],
                    &coeffs,
                    KlDirection::StudentTeacher,
                )?;
                total = Some(match total {
                    Some(acc) => t.add(acc, l)?,
                    None => l,
                });
            }
            Ok(total.unwrap())
        })
        .unwrap();
        results.push((format!("kd sequence {op}"), r.max_rel_err));
    }

    let worst = results
        .iter()
        .cloned()
        .fold(("".to_string(), 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let bad: Vec<_> = results.iter().filter(|(_, e)| e.is_nan() || *e >= 1e-4).collect();
    finish(
        4,
        "finite-difference gradients, every primitive and operator kind",
        bad.is_empty(),
        format!(
            "{} checks, worst {} at {:.2e}, failing {bad:?}",
            results.len(),
            worst.0,
            worst.1
        ),
        start,
        Duration::from_secs(120),
    );
}

#[test]
fn c5_coefficient_procedure() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let rec = LossRecord {
        target_loss: 4.110,
        mse_loss: 0.133,
        kl_loss: 0.004,
    };
    let c = decide_coefficients(&rec, Anchor::Target).unwrap();
    let ok = (c.c_target, c.c_mse, c.c_kl) == (1.0, 30.0, 1000.0);
    finish(
        5,
        "coefficients for losses (4.110, 0.133, 0.004)",
        ok,
        format!("({}, {}, {})", c.c_target, c.c_mse, c.c_kl),
        start,
        Duration::from_secs(1),
    );
}

#[test]
fn c6_kd_toy_experiment() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let cfg = ExperimentConfig::toy_default();
    let r = run_kd_experiment(&cfg).unwrap();
    let s = &r.summary;
    let threshold = 1.05 * s.best_single_val_ce;
    let ok = r.seeds.len() == 3 && s.combined_val_ce <= threshold;
    finish(
        6,
        "distillation toy task, combined vs best single loss",
        ok,
        format!(
            "median val CE combined {:.4} <= {:.4} (1.05 x best single {:.4}; target {:.4}, mse {:.4}, kl {:.4}, teacher {:.4})",
            s.combined_val_ce,
            threshold,
            s.best_single_val_ce,
            s.target_only_val_ce,
            s.mse_only_val_ce,
            s.kl_only_val_ce,
            s.teacher_val_ce
        ),
        start,
        Duration::from_secs(15 * 60),
    );
}

#[test]
fn c7_fused_naive_equivalence() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let dim = 64;
    let steps = 100;
    let xs: Vec<f64> = (0..steps * dim).map(|i| ((i as f64) * 0.37).sin()).collect();
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for op in operator_specs() {
        let cfg = LstmConfig {
            input_dim: dim,
            layers: vec![
                LayerConfig {
                    hidden_dim: dim,
                    input_op: op,
                    hidden_op: op,
                };
                2
            ],
        };
        let model = LstmModel::<f64>::init("equiv", &cfg, 17).unwrap();
        let naive = model.run_flat(steps, &xs, SeqMode::Naive, Exec::Serial).unwrap();
        let fused = model.run_flat(steps, &xs, SeqMode::Fused, Exec::Serial).unwrap();
        let err = max_rel_err(&fused, &naive);
        worst = worst.max(err);
        rows.push(format!("{op}={err:.1e}"));
    }
    finish(
        7,
        "fused vs naive LSTM over 100 steps, all kinds",
        worst < 1e-12,
        rows.join(" "),
        start,
        Duration::from_secs(30),
    );
}

#[test]
fn c8_speedup_reporting() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let cfg = BenchConfig {
        dims: vec![1600],
        configs: vec![spec("lgp-shuffle:g=10")],
        threads: ThreadMode::Single,
        precision: Precision::F32,
        ..BenchConfig::default()
    };
    let r = bench_run(&cfg).unwrap();
    let base = r.results.iter().find(|x| x.config == BASELINE_ID).unwrap();
    let row = r.results.iter().find(|x| x.config == "lgp-shuffle:g=10").unwrap();
    let exact = row.theoretical_speedup == Rational::from_integer(10);
    let fast = row.actual_speedup >= 5.0;
    let elapsed = start.elapsed();
    let budget = Duration::from_secs(600);
    let detail = format!(
        "theoretical {} (exact 10: {exact}), actual {:.2}x (dense {} ns, compressed {} ns)",
        row.theoretical_speedup, row.actual_speedup, base.median_ns, row.median_ns
    );
    // The measured ratio depends on the host; a shortfall is reported as an
    // advisory failure rather than failing the build. The exact theoretical
    // column and the time budget are hard requirements.
    report(
        8,
        "single-thread speedup at dim 1600, lgp-shuffle g=10",
        exact && fast,
        &detail,
        elapsed,
        budget,
    );
    if !fast {
        let _ = writeln!(
            std::io::stdout().lock(),
            "ADVISORY [8] actual speedup below 5x on this host"
        );
    }
    assert!(exact, "{detail}");
    assert!(elapsed < budget, "took {elapsed:?}");
}

fn fixture() -> LstmModel {
    let cfg = LstmConfig {
        input_dim: 12,
        layers: vec![
            LayerConfig {
                hidden_dim: 8,
                input_op: spec("lgp-dense:g=4"),
                hidden_op: spec("lowrank-lgp:r=2,g=2"),
            },
            LayerConfig {
                hidden_dim: 8,
                input_op: spec("svd:r=2"),
                hidden_op: spec("lgp-shuffle:g=4"),
            },
            LayerConfig {
                hidden_dim: 8,
                input_op: spec("dense"),
                hidden_op: spec("lgp-dense:g=2,mix=before"),
            },
        ],
    };
    LstmModel::init("acceptance", &cfg, 99).unwrap()
}

fn with_metadata(good: &[u8], edit: impl Fn(&mut antman::rnn::FileMetadata)) -> Vec<u8> {
    let (mut meta, offset) = decode_metadata(good).unwrap();
    edit(&mut meta);
    let json = serde_json::to_vec(&meta).unwrap();
    let mut out = Vec::new();
    out.extend_from_slice(b"ANTM");
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&good[offset..]);
    out
}

#[test]
fn c9_model_format() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut failures: Vec<String> = Vec::new();
    let mut check = |what: &str, ok: bool| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    // Round trip: weights stored as f32 come back bit for bit.
    let original = fixture();
    let bytes = encode_model(&original).unwrap();
    let loaded = decode_model(&bytes).unwrap();
    let bytes2 = encode_model(&loaded).unwrap();
    check("re-encode identical", bytes == bytes2);
    check("reload equal", decode_model(&bytes2).unwrap() == loaded);
    let mut as_f32 = original.cast::<f32>().cast::<f64>();
    as_f32.metadata = loaded.metadata.clone();
    check("loaded equals f32-rounded original", loaded == as_f32);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixture.antm");
    save_model(&loaded, &path).unwrap();
    check("file bytes", std::fs::read(&path).unwrap() == bytes);
    check("file reload", load_model(&path).unwrap() == loaded);
    let xs: Vec<f64> = (0..5 * 12).map(|i| (i as f64 * 0.21).cos()).collect();
    check(
        "reloaded outputs bitwise equal",
        load_model(&path)
            .unwrap()
            .run_flat(5, &xs, SeqMode::Naive, Exec::Serial)
            .unwrap()
            == loaded.run_flat(5, &xs, SeqMode::Naive, Exec::Serial).unwrap(),
    );

    // Error taxonomy.
    let mut bad = bytes.clone();
    bad[1] = b'Z';
    check(
        "bad magic",
        matches!(decode_model(&bad), Err(FormatError::BadMagic(_))),
    );
    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&7u32.to_le_bytes());
    check(
        "version",
        matches!(
            decode_model(&bad),
            Err(FormatError::UnsupportedVersion { found: 7 })
        ),
    );
    check(
        "truncated header",
        matches!(
            decode_model(&bytes[..15]),
            Err(FormatError::Truncated {
                section: "header",
                ..
            })
        ),
    );
    check(
        "truncated metadata",
        matches!(
            decode_model(&bytes[..20]),
            Err(FormatError::Truncated {
                section: "metadata",
                ..
            })
        ),
    );
    check(
        "truncated weights",
        matches!(
            decode_model(&bytes[..bytes.len() - 1]),
            Err(FormatError::Truncated {
                section: "weights",
                ..
            })
        ),
    );
    let mut bad = bytes.clone();
    bad.push(0);
    check(
        "trailing",
        matches!(decode_model(&bad), Err(FormatError::TrailingBytes(1))),
    );
    let mut bad = bytes[..16].to_vec();
    bad[8..16].copy_from_slice(&2u64.to_le_bytes());
    bad.extend_from_slice(b"[}");
    check(
        "metadata json",
        matches!(decode_model(&bad), Err(FormatError::Metadata(_))),
    );
    let bad = with_metadata(&bytes, |m| m.arrays[1].shape.push(1));
    check(
        "manifest shape",
        matches!(decode_model(&bad), Err(FormatError::Manifest(_))),
    );
    let bad = with_metadata(&bytes, |m| m.layers[1].hidden_dim = 4);
    check(
        "manifest layers",
        matches!(decode_model(&bad), Err(FormatError::Manifest(_))),
    );
    check(
        "missing file",
        matches!(
            load_model(dir.path().join("absent.antm")),
            Err(FormatError::Io(_))
        ),
    );
    // Every strict prefix is rejected without panicking.
    let all_prefixes_rejected = (0..bytes.len()).all(|k| decode_model(&bytes[..k]).is_err());
    check("all prefixes rejected", all_prefixes_rejected);

    let ok = failures.is_empty();
    finish(
        9,
        "model file round trip and corruption taxonomy",
        ok,
        format!("{} bytes, failing checks {failures:?}", bytes.len()),
        start,
        Duration::from_secs(5),
    );
}
