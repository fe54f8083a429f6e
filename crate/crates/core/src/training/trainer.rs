//! Minibatch SGD with momentum and gradient-norm clipping, early-stopped on
//! the validation objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ConfigError;

use super::loss::{kd_step_loss, kd_terms, KdCoefficients, KlDirection, LossError, LossTerms};
use super::model::SequenceModel;
use super::tape::{AutodiffError, Tape};
use super::task::Dataset;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Global gradient-norm bound.
    pub clip: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 0.1,
            momentum: 0.9,
            clip: 5.0,
            batch_size: 16,
            max_epochs: 30,
            patience: 3,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(ConfigError::Invalid(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ConfigError::Invalid(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return Err(ConfigError::Invalid(format!(
                "clip must be > 0, got {}",
                self.clip
            )));
        }
        for (field, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(ConfigError::Zero { field });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub coefficients: KdCoefficients,
    #[serde(default)]
    pub kl_direction: KlDirection,
}

impl LossConfig {
    pub fn new(coefficients: KdCoefficients) -> Self {
        LossConfig {
            coefficients,
            kl_direction: KlDirection::default(),
        }
    }
}

/// `v <- mu v + g; p <- p - lr v`, after scaling `g` so its global norm is
/// at most `clip`.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    clip: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(cfg: &OptimizerConfig, params: &[Vec<f64>]) -> Self {
        Sgd {
            lr: cfg.lr,
            momentum: cfg.momentum,
            clip: cfg.clip,
            velocity: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// Applies one update and returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>]) -> f64 {
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if norm > self.clip { self.clip / norm } else { 1.0 };
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = self.momentum * *v + scale * g;
                *p -= self.lr * *v;
            }
        }
        norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_ce: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// The model restored to its best validation epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SequenceModel,
    pub trace: TrainTrace,
    /// All three validation terms at the best epoch.
    pub val: LossTerms,
    pub val_loss: f64,
}

/// Per-sequence teacher distributions, computed once.
pub type TeacherOutputs = Vec<Vec<Vec<f64>>>;

pub fn teacher_outputs(
    teacher: &SequenceModel,
    seqs: &[Vec<usize>],
) -> Result<TeacherOutputs, AutodiffError> {
    seqs.iter().map(|s| teacher.predict(&s[..s.len() - 1])).collect()
}

/// Validation terms averaged over all steps of `seqs`. Without a teacher
/// the MSE and KL terms are zero.
pub fn evaluate(
    model: &SequenceModel,
    seqs: &[Vec<usize>],
    teacher: Option<&TeacherOutputs>,
    direction: KlDirection,
) -> Result<LossTerms, TrainError> {
    let mut total = LossTerms::default();
    let mut steps = 0usize;
    for (k, s) in seqs.iter().enumerate() {
        let student = model.predict(&s[..s.len() - 1])?;
        let t = match teacher {
            Some(t) => &t[k],
            None => &student,
        };
        let terms = kd_terms(&student, t, &s[1..], direction)?;
        let n = student.len() as f64;
        total.target += terms.target * n;
        total.mse += terms.mse * n;
        total.kl += terms.kl * n;
        steps += student.len();
    }
    let n = steps as f64;
    Ok(LossTerms {
        target: total.target / n,
        mse: total.mse / n,
        kl: total.kl / n,
    })
}

/// Gradient of the step-averaged objective on one sequence.
fn sequence_gradient(
    model: &SequenceModel,
    tokens: &[usize],
    teacher: Option<&[Vec<f64>]>,
    loss: &LossConfig,
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    let mut tape = Tape::new();
    let ids: Vec<_> = model.params.iter().map(|p| tape.param(p.clone())).collect();
    let inputs = &tokens[..tokens.len() - 1];
    let outs = model.forward_on_tape(&mut tape, &ids, inputs)?;
    let mut total = None;
    for (k, &o) in outs.iter().enumerate() {
        let t = teacher.map(|t| tape.constant(t[k].clone()));
        let l = kd_step_loss(
            &mut tape,
            o,
            t,
            tokens[k + 1],
            &loss.coefficients,
            loss.kl_direction,
        )?;
        total = Some(match total {
            None => l,
            Some(prev) => tape.add(prev, l)?,
        });
    }
    let total = total.ok_or_else(|| AutodiffError::Shape {
        op: "train",
        detail: "sequence has no prediction steps".into(),
    })?;
    let mean = tape.scale(total, 1.0 / outs.len() as f64);
    let grads = tape.backward(mean)?;
    let g = ids
        .iter()
        .map(|&id| grads.wrt(id).map(<[f64]>::to_vec))
        .collect::<Result<_, _>>()?;
    Ok((tape.scalar(mean), g))
}

/// Trains `model` on `data.train`, stopping once the validation objective
/// has not improved for `patience` epochs, and returns the best model.
/// `teacher` is required when the MSE or KL coefficient is nonzero.
pub fn train(
    mut model: SequenceModel,
    data: &Dataset,
    teacher: Option<&SequenceModel>,
    loss: &LossConfig,
    opt: &OptimizerConfig,
) -> Result<TrainOutcome, TrainError> {
    opt.validate()?;
    loss.coefficients.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(ConfigError::Invalid("train and validation sets must be nonempty".into()).into());
    }
    if data.train.iter().chain(&data.val).any(|s| s.len() < 2) {
        return Err(ConfigError::Invalid("every sequence needs at least two tokens".into()).into());
    }
    if loss.coefficients.needs_teacher() && teacher.is_none() {
        return Err(ConfigError::Invalid("MSE and KL terms need a teacher model".into()).into());
    }
    let (train_t, val_t) = match teacher {
        Some(t) => (
            Some(teacher_outputs(t, &data.train)?),
            Some(teacher_outputs(t, &data.val)?),
        ),
        None => (None, None),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut sgd = Sgd::new(opt, &model.params);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut trace = TrainTrace::default();
    let mut best: Option<(Vec<Vec<f64>>, LossTerms, f64)> = None;
    let mut stale = 0;

    for epoch in 1..=opt.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(opt.batch_size) {
            let mut acc: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.len()]).collect();
            for &i in batch {
                let t = train_t.as_ref().map(|t| t[i].as_slice());
                let (l, g) = sequence_gradient(&model, &data.train[i], t, loss)?;
                if !l.is_finite() {
                    return Err(TrainError::Diverged { epoch });
                }
                epoch_loss += l;
                for (a, g) in acc.iter_mut().zip(&g) {
                    for (a, g) in a.iter_mut().zip(g) {
                        *a += g;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            acc.iter_mut().flatten().for_each(|a| *a *= inv);
            sgd.step(&mut model.params, &acc);
            if model.params.iter().flatten().any(|p| !p.is_finite()) {
                return Err(TrainError::Diverged { epoch });
            }
        }
        let val = evaluate(&model, &data.val, val_t.as_ref(), loss.kl_direction)?;
        let val_loss = val.combine(&loss.coefficients);
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        trace.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / data.train.len() as f64,
            val_loss,
            val_ce: val.target,
        });
        if best.as_ref().is_none_or(|b| val_loss < b.2) {
            best = Some((model.params.clone(), val, val_loss));
            trace.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= opt.patience {
                break;
            }
        }
    }
    let (params, val, val_loss) = best.expect("at least one epoch runs");
    model.params = params;
    Ok(TrainOutcome {
        model,
        trace,
        val,
        val_loss,
    })
}
