//! End-to-end distillation experiment: train a teacher, train the student
//! once per loss term, balance the coefficients from those runs, then
//! train the student on the combined objective. Repeated per seed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

use super::coefficients::{decide_coefficients, Anchor, LossRecord};
use super::loss::{KdCoefficients, KlDirection, LossTerms};
use super::model::{ModelSpec, SequenceModel};
use super::task::{Dataset, ToyTask};
use super::trainer::{train, LossConfig, OptimizerConfig, TrainError, TrainOutcome, TrainTrace};

pub const REPORT_SCHEMA: &str = "antman.kd-report.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub task: ToyTask,
    pub teacher: ModelSpec,
    pub student: ModelSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub kl_direction: KlDirection,
    #[serde(default)]
    pub anchor: Anchor,
    /// One full run per seed; the seed drives initialization and batch order.
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    /// Dense teacher and LGP-Shuffle `g=4` student, hidden size 32, three
    /// seeds.
    pub fn toy_default() -> Self {
        ExperimentConfig {
            task: ToyTask::default(),
            teacher: ModelSpec::uniform(32, crate::config::OperatorSpec::dense()),
            student: ModelSpec::uniform(32, "lgp-shuffle:g=4".parse().unwrap()),
            optimizer: OptimizerConfig::default(),
            kl_direction: KlDirection::default(),
            anchor: Anchor::Target,
            seeds: vec![0, 1, 2],
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.task.validate()?;
        self.teacher.validate()?;
        self.student.validate()?;
        self.optimizer.validate()?;
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("at least one seed is required".into()));
        }
        Ok(())
    }
}

/// One training run, summarized at its best validation epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub coefficients: KdCoefficients,
    pub val: LossTerms,
    pub val_loss: f64,
    pub trace: TrainTrace,
}

impl RunSummary {
    fn from_outcome(coefficients: KdCoefficients, out: &TrainOutcome) -> Self {
        RunSummary {
            coefficients,
            val: out.val,
            val_loss: out.val_loss,
            trace: out.trace.clone(),
        }
    }

    pub fn val_ce(&self) -> f64 {
        self.val.target
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub teacher: RunSummary,
    pub target_only: RunSummary,
    pub mse_only: RunSummary,
    pub kl_only: RunSummary,
    /// Each single-loss run's own term at its best epoch.
    pub loss_record: LossRecord,
    pub coefficients: KdCoefficients,
    pub combined: RunSummary,
}

impl SeedReport {
    pub fn best_single_val_ce(&self) -> f64 {
        [&self.target_only, &self.mse_only, &self.kl_only]
            .iter()
            .map(|r| r.val_ce())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Medians over seeds of the validation cross-entropy of each run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub unigram_val_ce: f64,
    pub entropy_rate: f64,
    pub teacher_val_ce: f64,
    pub target_only_val_ce: f64,
    pub mse_only_val_ce: f64,
    pub kl_only_val_ce: f64,
    /// Lowest of the three single-loss medians.
    pub best_single_val_ce: f64,
    pub combined_val_ce: f64,
    /// `combined_val_ce / best_single_val_ce`.
    pub combined_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdReport {
    pub schema: String,
    pub config: ExperimentConfig,
    pub student_params: usize,
    pub teacher_params: usize,
    pub seeds: Vec<SeedReport>,
    pub summary: Summary,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run_seed(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<SeedReport, TrainError> {
    let opt = OptimizerConfig {
        seed,
        ..cfg.optimizer
    };
    let loss = |c: KdCoefficients| LossConfig {
        coefficients: c,
        kl_direction: cfg.kl_direction,
    };
    let vocab = data.vocab;
    // Teacher and student draw from distinct seed streams.
    let teacher0 = SequenceModel::init(vocab, &cfg.teacher, seed.wrapping_mul(2))?;
    let student0 = SequenceModel::init(vocab, &cfg.student, seed.wrapping_mul(2).wrapping_add(1))?;

    let teacher = train(teacher0, data, None, &loss(KdCoefficients::TARGET_ONLY), &opt)?;
    let t = Some(&teacher.model);
    let single = |c: KdCoefficients| -> Result<RunSummary, TrainError> {
        let out = train(student0.clone(), data, t, &loss(c), &opt)?;
        Ok(RunSummary::from_outcome(c, &out))
    };
    let target_only = single(KdCoefficients::TARGET_ONLY)?;
    let mse_only = single(KdCoefficients::MSE_ONLY)?;
    let kl_only = single(KdCoefficients::KL_ONLY)?;
    let loss_record = LossRecord {
        target_loss: target_only.val.target,
        mse_loss: mse_only.val.mse,
        kl_loss: kl_only.val.kl,
    };
    let coefficients = decide_coefficients(&loss_record, cfg.anchor)?;
    let combined = single(coefficients)?;
    Ok(SeedReport {
        seed,
        teacher: RunSummary::from_outcome(KdCoefficients::TARGET_ONLY, &teacher),
        target_only,
        mse_only,
        kl_only,
        loss_record,
        coefficients,
        combined,
    })
}

/// Runs every seed (in parallel when the pool has more than one thread)
/// and summarizes them.
pub fn run_kd_experiment(cfg: &ExperimentConfig) -> Result<KdReport, TrainError> {
    cfg.validate()?;
    let data = cfg.task.generate()?;
    let seeds = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, &data, s))
        .collect::<Result<Vec<_>, _>>()?;
    let med = |f: &dyn Fn(&SeedReport) -> f64| median(&seeds.iter().map(f).collect::<Vec<_>>());
    let target_only = med(&|s| s.target_only.val_ce());
    let mse_only = med(&|s| s.mse_only.val_ce());
    let kl_only = med(&|s| s.kl_only.val_ce());
    let best_single = target_only.min(mse_only).min(kl_only);
    let combined = med(&|s| s.combined.val_ce());
    let summary = Summary {
        unigram_val_ce: data.unigram_val_ce(),
        entropy_rate: cfg.task.entropy_rate(),
        teacher_val_ce: med(&|s| s.teacher.val_ce()),
        target_only_val_ce: target_only,
        mse_only_val_ce: mse_only,
        kl_only_val_ce: kl_only,
        best_single_val_ce: best_single,
        combined_val_ce: combined,
        combined_ratio: combined / best_single,
    };
    let param_count = |spec: &ModelSpec| SequenceModel::init(data.vocab, spec, 0).map(|m| m.param_count());
    Ok(KdReport {
        schema: REPORT_SCHEMA.to_string(),
        config: cfg.clone(),
        student_params: param_count(&cfg.student)?,
        teacher_params: param_count(&cfg.teacher)?,
        seeds,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::OperatorSpec;
    use crate::training::coefficients::balance_spread;

    fn tiny(student: ModelSpec) -> ExperimentConfig {
        ExperimentConfig {
            task: ToyTask {
                vocab: 8,
                seq_len: 12,
                seed: 3,
                train_size: 48,
                val_size: 16,
            },
            teacher: ModelSpec::uniform(8, OperatorSpec::dense()),
            student,
            optimizer: OptimizerConfig {
                batch_size: 8,
                max_epochs: 12,
                ..OptimizerConfig::default()
            },
            kl_direction: KlDirection::default(),
            anchor: Anchor::Target,
            seeds: vec![0, 1, 2],
        }
    }

    #[test]
    fn dense_student_matches_dense_teacher() {
        let cfg = tiny(ModelSpec::uniform(8, OperatorSpec::dense()));
        let report = run_kd_experiment(&cfg).unwrap();
        let s = report.summary;
        assert!(
            (s.combined_val_ce - s.teacher_val_ce).abs() <= 0.02 * s.teacher_val_ce,
            "{s:?}"
        );
        assert_eq!(report.student_params, report.teacher_params);
    }

    #[test]
    fn report_coefficients_are_balanced_and_round_trip() {
        let cfg = tiny(ModelSpec::uniform(8, "lgp-shuffle:g=2".parse().unwrap()));
        let report = run_kd_experiment(&cfg).unwrap();
        for s in &report.seeds {
            assert_eq!(
                s.coefficients,
                decide_coefficients(&s.loss_record, Anchor::Target).unwrap()
            );
            assert_eq!(s.coefficients.c_target, 1.0);
            assert!(balance_spread(&s.loss_record, &s.coefficients) <= 2.0);
            assert_eq!(s.combined.coefficients, s.coefficients);
        }
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: KdReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.schema, REPORT_SCHEMA);
    }

    #[test]
    fn config_defaults_fill_in() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"teacher":{"embed_dim":8,"hidden_dim":8,"input_op":"dense","hidden_op":"dense"},
                "student":{"embed_dim":8,"hidden_dim":8,"input_op":"lgp-shuffle:g=4","hidden_op":"lgp-shuffle:g=4"},
                "seeds":[7]}"#,
        )
        .unwrap();
        assert_eq!(cfg.task, ToyTask::default());
        assert_eq!(cfg.optimizer, OptimizerConfig::default());
        assert!(cfg.validate().is_ok());
        let bad = ExperimentConfig { seeds: vec![], ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
