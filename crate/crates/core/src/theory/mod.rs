//! Monte Carlo validators for the robustness guarantees of the trimmed mean,
//! the AND-mask, and the per-client gradient-sign behaviour of the logistic
//! model on Gaussian data.
//!
//! Each checker returns a serializable report; callers (CLI, CI) decide what
//! to do with a failed check.

mod and_mask;
mod gradient_sign;
mod trimmed;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use and_mask::{check_theorem2, theorem2_bound, SignRatio, Theorem2Bound};
pub use gradient_sign::{
    check_corollary1, check_theorem3, expected_gradient, first_order_gain, first_order_terms, predicted_gradient_sign,
    CaseBound, ClientSign, ConsistencyCase, Corollary1Report, GradientEstimate, SignStatus, Theorem3Report,
};
pub use trimmed::{
    check_theorem1, modified_trimmed_mean, order_statistic_thresholds, theorem1_alpha, NormalDist, Theorem1Params,
};

/// Outcome of a probabilistic bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub check: String,
    pub trials: usize,
    pub violations: usize,
    pub violation_rate: f64,
    /// Largest violation rate the bound permits.
    pub allowed_violation_rate: f64,
    /// Check-specific empirical summary; see each checker.
    pub empirical_quantile: f64,
    /// Check-specific theoretical value; see each checker.
    pub theoretical_bound: f64,
    /// False when the bound is vacuous (e.g. a probability bound >= 1).
    pub informative: bool,
    pub passed: bool,
    pub parameters: BTreeMap<String, f64>,
}

impl BoundCheckReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

/// Empirical `p`-quantile (nearest rank) of unsorted data.
pub(crate) fn quantile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let p = p.clamp(0.0, 1.0);
    let rank = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}
