//! Closed-form evaluators for the theoretical ARL/WADD guarantees and the
//! asymptotic threshold rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Privacy budget and global sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta_max: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta_max: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if !(delta_max > 0.0) || !delta_max.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "delta_max must be positive and finite, got {delta_max}"
            )));
        }
        Ok(PrivacyParams { epsilon, delta_max })
    }
}

/// Privacy-degraded exponent `h = min(epsilon / (2 delta_max), 1)`.
pub fn h(p: PrivacyParams) -> f64 {
    (p.epsilon / (2.0 * p.delta_max)).min(1.0)
}

/// ARL lower bound, valid for `b > K + 1`:
/// `(1/16) e^{h b - (K+1)} ((K+1)/(b+K+1))^{K+1}`, evaluated in log-space.
pub fn arl_lower_bound(b: f64, k: usize, p: PrivacyParams) -> Result<f64> {
    let kp1 = (k + 1) as f64;
    if !(b > kp1) {
        return Err(Error::InvalidConfig(format!(
            "arl_lower_bound requires b > K + 1 (b = {b}, K = {k})"
        )));
    }
    let log_bound =
        -(16.0f64).ln() + h(p) * b - kp1 + kp1 * (kp1 / (b + kp1)).ln();
    Ok(log_bound.exp())
}

/// Leading terms of the WADD upper bound:
/// `b / I_tot + (4 delta_max / (epsilon I_tot^{3/2})) sqrt(b)`.
///
/// The additive constant of the full bound is deliberately omitted; treat the
/// output as "leading terms, constant omitted".
pub fn wadd_upper_leading(b: f64, i_tot: f64, p: PrivacyParams) -> Result<f64> {
    if !(i_tot > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "wadd_upper_leading requires I_tot > 0, got {i_tot}"
        )));
    }
    if !(b > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "wadd_upper_leading requires b > 0, got {b}"
        )));
    }
    Ok(b / i_tot + 4.0 * p.delta_max / (p.epsilon * i_tot.powf(1.5)) * b.sqrt())
}

/// Leading term of the threshold meeting an ARL target `gamma`:
/// `ln(gamma) / h`.
pub fn asymptotic_threshold(gamma: f64, p: PrivacyParams) -> Result<f64> {
    if !(gamma > 1.0) {
        return Err(Error::InvalidConfig(format!(
            "asymptotic_threshold requires gamma > 1, got {gamma}"
        )));
    }
    Ok(gamma.ln() / h(p))
}
