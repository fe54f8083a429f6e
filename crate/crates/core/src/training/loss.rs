use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tape::{kl_value, mse_value, AutodiffError, NodeId, Tape};

/// Tolerance on `|sum(p) - 1|` for inputs treated as distributions.
pub const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{which} distribution at step {step} sums to {sum}, not 1")]
    NotNormalized {
        which: &'static str,
        step: usize,
        sum: f64,
    },
    #[error("invalid coefficients: {0}")]
    Coefficients(String),
}

/// Weights of the target, MSE and KL terms of the distillation objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdCoefficients {
    pub c_target: f64,
    pub c_mse: f64,
    pub c_kl: f64,
}

impl KdCoefficients {
    pub fn new(c_target: f64, c_mse: f64, c_kl: f64) -> Result<Self, LossError> {
        let c = KdCoefficients {
            c_target,
            c_mse,
            c_kl,
        };
        c.validate()?;
        Ok(c)
    }

    pub const TARGET_ONLY: KdCoefficients = KdCoefficients {
        c_target: 1.0,
        c_mse: 0.0,
        c_kl: 0.0,
    };
    pub const MSE_ONLY: KdCoefficients = KdCoefficients {
        c_target: 0.0,
        c_mse: 1.0,
        c_kl: 0.0,
    };
    pub const KL_ONLY: KdCoefficients = KdCoefficients {
        c_target: 0.0,
        c_mse: 0.0,
        c_kl: 1.0,
    };

    pub fn validate(&self) -> Result<(), LossError> {
        let all = [self.c_target, self.c_mse, self.c_kl];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(LossError::Coefficients(format!(
                "coefficients must be finite and nonnegative, got {all:?}"
            )));
        }
        if all.iter().all(|&c| c == 0.0) {
            return Err(LossError::Coefficients("all coefficients are zero".into()));
        }
        Ok(())
    }

    /// True when the MSE or KL term needs teacher outputs.
    pub fn needs_teacher(&self) -> bool {
        self.c_mse > 0.0 || self.c_kl > 0.0
    }

    pub fn scaled(&self, s: f64) -> KdCoefficients {
        KdCoefficients {
            c_target: self.c_target * s,
            c_mse: self.c_mse * s,
            c_kl: self.c_kl * s,
        }
    }
}

/// Argument order of the KL term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(student || teacher)`.
    #[default]
    StudentTeacher,
    /// `KL(teacher || student)`.
    TeacherStudent,
}

/// The three terms of the objective, each averaged over steps.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub target: f64,
    pub mse: f64,
    pub kl: f64,
}

impl LossTerms {
    pub fn combine(&self, c: &KdCoefficients) -> f64 {
        c.c_target * self.target + c.c_mse * self.mse + c.c_kl * self.kl
    }
}

fn check_distribution(which: &'static str, step: usize, p: &[f64]) -> Result<(), LossError> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL || p.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(LossError::NotNormalized { which, step, sum });
    }
    Ok(())
}

/// Per-term values for per-step student and teacher distributions and
/// target classes.
pub fn kd_terms(
    student: &[Vec<f64>],
    teacher: &[Vec<f64>],
    targets: &[usize],
    direction: KlDirection,
) -> Result<LossTerms, LossError> {
    if student.len() != teacher.len() || student.len() != targets.len() {
        return Err(LossError::Shape(format!(
            "{} student steps, {} teacher steps, {} targets",
            student.len(),
            teacher.len(),
            targets.len()
        )));
    }
    if student.is_empty() {
        return Err(LossError::Shape("no steps".into()));
    }
    let mut terms = LossTerms::default();
    for (step, ((s, t), &target)) in student.iter().zip(teacher).zip(targets).enumerate() {
        if s.len() != t.len() || target >= s.len() {
            return Err(LossError::Shape(format!(
                "step {step}: {} student classes, {} teacher classes, target {target}",
                s.len(),
                t.len()
            )));
        }
        check_distribution("student", step, s)?;
        check_distribution("teacher", step, t)?;
        terms.target += -s[target].ln();
        terms.mse += mse_value(s, t);
        terms.kl += match direction {
            KlDirection::StudentTeacher => kl_value(s, t),
            KlDirection::TeacherStudent => kl_value(t, s),
        };
    }
    let n = student.len() as f64;
    terms.target /= n;
    terms.mse /= n;
    terms.kl /= n;
    Ok(terms)
}

/// `c_target * CE(S, targets) + c_mse * MSE(S, T) + c_kl * KL(S, T)`,
/// averaged over steps.
pub fn kd_loss(
    student: &[Vec<f64>],
    teacher: &[Vec<f64>],
    targets: &[usize],
    coeffs: &KdCoefficients,
    direction: KlDirection,
) -> Result<f64, LossError> {
    coeffs.validate()?;
    Ok(kd_terms(student, teacher, targets, direction)?.combine(coeffs))
}

/// Records the weighted per-step objective on a tape; terms with a zero
/// coefficient are skipped. `teacher` may be `None` only when both
/// teacher terms are off.
pub fn kd_step_loss(
    tape: &mut Tape,
    student: NodeId,
    teacher: Option<NodeId>,
    target: usize,
    coeffs: &KdCoefficients,
    direction: KlDirection,
) -> Result<NodeId, AutodiffError> {
    let mut terms = Vec::with_capacity(3);
    if coeffs.c_target > 0.0 {
        let ce = tape.cross_entropy(student, target)?;
        terms.push(tape.scale(ce, coeffs.c_target));
    }
    if coeffs.needs_teacher() {
        let t = teacher.ok_or_else(|| AutodiffError::Shape {
            op: "kd_step_loss",
            detail: "teacher output required for MSE/KL terms".into(),
        })?;
        if coeffs.c_mse > 0.0 {
            let mse = tape.mse(student, t)?;
            terms.push(tape.scale(mse, coeffs.c_mse));
        }
        if coeffs.c_kl > 0.0 {
            let kl = match direction {
                KlDirection::StudentTeacher => tape.kl(student, t)?,
                KlDirection::TeacherStudent => tape.kl(t, student)?,
            };
            terms.push(tape.scale(kl, coeffs.c_kl));
        }
    }
    let Some((&first, rest)) = terms.split_first() else {
        return Err(AutodiffError::Shape {
            op: "kd_step_loss",
            detail: "all coefficients are zero".into(),
        });
    };
    let mut total = first;
    for &t in rest {
        total = tape.add(total, t)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dists() -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<usize>) {
        (
            vec![vec![0.7, 0.2, 0.1], vec![0.25, 0.25, 0.5]],
            vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3]],
            vec![0, 2],
        )
    }

    #[test]
    fn equal_distributions_zero_teacher_terms() {
        let (s, _, y) = dists();
        let c = KdCoefficients::new(0.0, 1.0, 1.0).unwrap();
        assert_eq!(kd_loss(&s, &s, &y, &c, KlDirection::StudentTeacher).unwrap(), 0.0);
    }

    #[test]
    fn target_only_is_cross_entropy() {
        let (s, t, y) = dists();
        let v = kd_loss(
            &s,
            &t,
            &y,
            &KdCoefficients::TARGET_ONLY,
            KlDirection::StudentTeacher,
        )
        .unwrap();
        assert!((v - (-(0.7f64.ln()) - 0.5f64.ln()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_three_class_value() {
        // One step, S = (0.5, 0.3, 0.2), T = (0.4, 0.4, 0.2), target 1,
        // coefficients (1, 2, 3):
        //   CE  = -ln 0.3                           = 1.2039728043259361
        //   MSE = (0.01 + 0.01 + 0) / 3             = 0.006666666666666667
        //   KL  = 0.5 ln(1.25) + 0.3 ln(0.75) + 0   = 0.025267153921570612
        let s = vec![vec![0.5, 0.3, 0.2]];
        let t = vec![vec![0.4, 0.4, 0.2]];
        let c = KdCoefficients::new(1.0, 2.0, 3.0).unwrap();
        let v = kd_loss(&s, &t, &[1], &c, KlDirection::StudentTeacher).unwrap();
        let expected = 1.2039728043259361 + 2.0 * 0.006666666666666667 + 3.0 * 0.025267153921570612;
        assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");

        // Reversed: KL(T || S) = 0.4 ln 0.8 + 0.4 ln(4/3) = 0.025815408455028457
        let rev = kd_terms(&s, &t, &[1], KlDirection::TeacherStudent).unwrap();
        let kl_rev = 0.4 * (0.8f64).ln() + 0.4 * (4.0f64 / 3.0).ln();
        assert!((rev.kl - kl_rev).abs() < 1e-15);
    }

    #[test]
    fn linear_in_coefficients() {
        let (s, t, y) = dists();
        let c = KdCoefficients::new(1.0, 30.0, 1000.0).unwrap();
        let a = kd_loss(&s, &t, &y, &c, KlDirection::StudentTeacher).unwrap();
        let b = kd_loss(&s, &t, &y, &c.scaled(2.0), KlDirection::StudentTeacher).unwrap();
        assert!((b - 2.0 * a).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn rejects_unnormalized_and_mismatched() {
        let (s, t, y) = dists();
        let bad = vec![vec![0.7, 0.2, 0.2], s[1].clone()];
        let c = KdCoefficients::TARGET_ONLY;
        assert!(matches!(
            kd_loss(&bad, &t, &y, &c, KlDirection::StudentTeacher),
            Err(LossError::NotNormalized {
                which: "student",
                step: 0,
                ..
            })
        ));
        assert!(matches!(
            kd_loss(&s, &t[..1], &y, &c, KlDirection::StudentTeacher),
            Err(LossError::Shape(_))
        ));
        assert!(KdCoefficients::new(0.0, 0.0, 0.0).is_err());
        assert!(KdCoefficients::new(-1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn tape_objective_matches_plain_objective() {
        let (s, t, y) = dists();
        let c = KdCoefficients::new(1.0, 30.0, 1000.0).unwrap();
        for dir in [KlDirection::StudentTeacher, KlDirection::TeacherStudent] {
            let mut tape = Tape::new();
            let mut total = None;
            for k in 0..2 {
                let sn = tape.param(s[k].clone());
                let tn = tape.constant(t[k].clone());
                let l = kd_step_loss(&mut tape, sn, Some(tn), y[k], &c, dir).unwrap();
                total = Some(match total {
                    None => l,
                    Some(prev) => tape.add(prev, l).unwrap(),
                });
            }
            let mean = tape.scale(total.unwrap(), 0.5);
            let expected = kd_loss(&s, &t, &y, &c, dir).unwrap();
            assert!((tape.scalar(mean) - expected).abs() < 1e-12);
        }
    }
}
