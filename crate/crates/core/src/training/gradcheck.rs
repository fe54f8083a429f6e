//! Central finite-difference check of tape gradients.

use super::tape::{AutodiffError, NodeId, Tape};

/// Perturbation used for the central differences.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared against it instead of their own
/// magnitude; below it, the difference quotient is dominated by rounding of
/// the loss.
pub const FD_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(parameter, element)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Compares `backward` against `(f(p + h) - f(p - h)) / 2h` for every
/// element of every parameter. `build` records the forward pass given the
/// parameter nodes and returns the scalar loss.
pub fn check_gradients<F>(params: &[Vec<f64>], build: F) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, AutodiffError>,
{
    let eval = |values: &[Vec<f64>]| -> Result<(Tape, Vec<NodeId>, NodeId), AutodiffError> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|v| tape.param(v.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        Ok((tape, ids, loss))
    };
    let (tape, ids, loss) = eval(params)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| grads.wrt(id).map(<[f64]>::to_vec))
        .collect::<Result<_, _>>()?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = params.to_vec();
    for p in 0..params.len() {
        for e in 0..params[p].len() {
            let orig = probe[p][e];
            probe[p][e] = orig + FD_STEP;
            let (t, _, l) = eval(&probe)?;
            let up = t.scalar(l);
            probe[p][e] = orig - FD_STEP;
            let (t, _, l) = eval(&probe)?;
            let down = t.scalar(l);
            probe[p][e] = orig;

            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[p][e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                if rel >= report.max_rel_err {
                    report.worst = Some((p, e));
                }
            }
        }
    }
    Ok(report)
}
