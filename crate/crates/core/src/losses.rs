//! Detection-head losses and the total objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prediction clamp keeping both logs finite.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

impl FocalParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) || !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::Validation(format!("focal params need α ∈ (0,1), γ ≥ 0; got {alpha}, {gamma}")));
        }
        Ok(Self { alpha, gamma })
    }
}

/// `−α(1−p)^γ β log p − (1−α) p^γ (1−β) log(1−p)` with `p` clamped to `[1e-7, 1−1e-7]`.
pub fn focal_loss(pred: f64, target: f64, params: FocalParams) -> f64 {
    let p = pred.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let FocalParams { alpha, gamma } = params;
    -alpha * (1.0 - p).powf(gamma) * target * p.ln() - (1.0 - alpha) * p.powf(gamma) * (1.0 - target) * (1.0 - p).ln()
}

/// `d focal_loss / d pred`; zero where the clamp is active.
pub fn focal_loss_grad(pred: f64, target: f64, params: FocalParams) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pred) {
        return 0.0;
    }
    let p = pred;
    let FocalParams { alpha, gamma } = params;
    let q = 1.0 - p;
    let pos = if gamma == 0.0 {
        -1.0 / p
    } else {
        gamma * q.powf(gamma - 1.0) * p.ln() - q.powf(gamma) / p
    };
    let neg = if gamma == 0.0 {
        1.0 / q
    } else {
        -gamma * p.powf(gamma - 1.0) * q.ln() + p.powf(gamma) / q
    };
    alpha * target * pos + (1.0 - alpha) * (1.0 - target) * neg
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Center offsets, raw size differences (meters) and yaw residual (pre-wrapped to `(−π, π]`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxResiduals {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dh: f64,
    pub dw: f64,
    pub dl: f64,
    pub dtheta: f64,
}

impl BoxResiduals {
    pub fn from_array(v: [f64; 7]) -> Self {
        Self { dx: v[0], dy: v[1], dz: v[2], dh: v[3], dw: v[4], dl: v[5], dtheta: v[6] }
    }

    pub fn to_array(self) -> [f64; 7] {
        [self.dx, self.dy, self.dz, self.dh, self.dw, self.dl, self.dtheta]
    }
}

/// Sum over boxes and their seven components of `smooth_l1`.
pub fn box_regression_loss(residuals: &[BoxResiduals]) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(residuals.iter().flat_map(|r| r.to_array()).map(smooth_l1).sum())
}

pub fn box_regression_grad(residuals: &[BoxResiduals]) -> Result<Vec<BoxResiduals>> {
    if residuals.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(residuals.iter().map(|r| BoxResiduals::from_array(r.to_array().map(smooth_l1_grad))).collect())
}

/// Unweighted `L_cls + L_reg + L_contrast`.
pub fn total_loss(l_cls: f64, l_reg: f64, l_contrast: f64) -> Result<f64> {
    for (name, v) in [("classification", l_cls), ("regression", l_reg), ("contrastive", l_contrast)] {
        if v.is_nan() {
            return Err(Error::NonFinite(format!("{name} loss is NaN")));
        }
    }
    let total = l_cls + l_reg + l_contrast;
    if total.is_nan() {
        return Err(Error::NonFinite("total loss is NaN".into()));
    }
    Ok(total)
}
