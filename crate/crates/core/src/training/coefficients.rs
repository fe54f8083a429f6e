//! Loss-coefficient balancing: pick weights so that each term of the
//! combined objective contributes about the same magnitude as the anchor
//! term, using the loss values each term converged to when trained alone.

use serde::{Deserialize, Serialize};

use super::loss::{KdCoefficients, LossError};

/// Converged validation values of single-loss training runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub target_loss: f64,
    pub mse_loss: f64,
    pub kl_loss: f64,
}

/// Which term keeps coefficient 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    #[default]
    Target,
    Mse,
    Kl,
}

/// Rounds a positive value to one significant figure.
pub fn round_one_sig_fig(v: f64) -> f64 {
    debug_assert!(v > 0.0 && v.is_finite());
    let exp = v.log10().floor() as i32;
    if exp >= 0 {
        let p = 10f64.powi(exp);
        (v / p).round() * p
    } else {
        let p = 10f64.powi(-exp);
        (v * p).round() / p
    }
}

/// Anchor coefficient 1; every other coefficient is
/// `anchor_loss / own_loss` rounded to one significant figure.
pub fn decide_coefficients(rec: &LossRecord, anchor: Anchor) -> Result<KdCoefficients, LossError> {
    let losses = [rec.target_loss, rec.mse_loss, rec.kl_loss];
    if let Some(bad) = losses.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(LossError::Coefficients(format!(
            "recorded losses must be positive and finite, got {bad}"
        )));
    }
    let anchor_loss = match anchor {
        Anchor::Target => rec.target_loss,
        Anchor::Mse => rec.mse_loss,
        Anchor::Kl => rec.kl_loss,
    };
    let c = |own: f64| round_one_sig_fig(anchor_loss / own);
    KdCoefficients::new(c(rec.target_loss), c(rec.mse_loss), c(rec.kl_loss))
}

/// Ratio of the largest to the smallest weighted term `c_i * loss_i`.
pub fn balance_spread(rec: &LossRecord, c: &KdCoefficients) -> f64 {
    let products = [
        c.c_target * rec.target_loss,
        c.c_mse * rec.mse_loss,
        c.c_kl * rec.kl_loss,
    ];
    let max = products.iter().copied().fold(f64::MIN, f64::max);
    let min = products.iter().copied().fold(f64::MAX, f64::min);
    max / min
}
