//! Raw and calibrated first-step confidence.

use thiserror::Error;

use crate::types::BiasModel;

/// Smallest bias value a calibration is allowed to divide by.
pub const BIAS_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfidenceError {
    #[error("mean confidence needs at least one position")]
    Empty,
    #[error("confidence {value} at position {position} is outside (0, 1]")]
    OutOfRange { position: usize, value: f64 },
    #[error("bias B({length}) = {bias} is below the division guard")]
    BiasBelowGuard { length: usize, bias: f64 },
}

/// Neumaier-compensated arithmetic mean. Returns NaN for an empty slice.
pub(crate) fn compensated_mean(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    (sum + comp) / values.len() as f64
}

/// Mean of the per-position max-probabilities over the masked span.
pub fn mean_first_step_confidence(confidences: &[f64]) -> Result<f64, ConfidenceError> {
    if confidences.is_empty() {
        return Err(ConfidenceError::Empty);
    }
    if let Some((position, &value)) = confidences
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v > 0.0 && v <= 1.0))
    {
        return Err(ConfidenceError::OutOfRange { position, value });
    }
    // Compensated rounding can land one ulp outside [min, max] for constant input.
    let mean = compensated_mean(confidences);
    let (lo, hi) = confidences
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    Ok(mean.clamp(lo, hi))
}

impl BiasModel {
    /// `B(L) = a·exp(−b·L) + c·exp(−d·L) + e`.
    pub fn evaluate(&self, length: usize) -> f64 {
        let l = length as f64;
        self.a * (-self.b * l).exp() + self.c * (-self.d * l).exp() + self.e
    }
}

pub fn evaluate_bias(model: &BiasModel, length: usize) -> f64 {
    model.evaluate(length)
}

/// `Φ_c(L) = Φ(L) / B(L)`.
pub fn calibrate(phi: f64, length: usize, model: &BiasModel) -> Result<f64, ConfidenceError> {
    let bias = model.evaluate(length);
    if bias.is_nan() || bias <= BIAS_EPSILON {
        return Err(ConfidenceError::BiasBelowGuard { length, bias });
    }
    Ok(phi / bias)
}
