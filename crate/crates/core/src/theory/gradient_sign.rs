//! Sign of the expected logistic-loss gradient on one Gaussian client, and
//! the resulting sign consistency across a population with a colluding
//! trigger.
//!
//! For feature `k` with mean `mu_k` the expected gradient
//! `E[x_k (s(w·x) - y)]` has sign `sign(w_k)` when `mu_k = 0`, and sign
//! `-sign(mu_k)` when `mu_k != 0` and `w_k mu_k <= 0`. When `w_k mu_k > 0` the
//! sign depends on where `w_k` sits relative to the client's optimum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_dim, dot, sigmoid};
use crate::rng::{stream, stream_rng};
use crate::synthdata::{GaussianClientSpec, ScenarioConfig};

const CHUNK: usize = 1 << 16;

/// Monte Carlo estimate of one coordinate of the expected gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl GradientEstimate {
    /// `Some(sign)` when `|mean| > 3 SE`, else `None`.
    pub fn sign(&self) -> Option<i8> {
        if self.mean.abs() > 3.0 * self.std_error {
            Some(if self.mean > 0.0 { 1 } else { -1 })
        } else {
            None
        }
    }
}

/// Estimates `E[∇_{w_k} ℓ]` under `spec` from `n_samples` draws.
pub fn expected_gradient(
    spec: &GaussianClientSpec,
    w: &[f64],
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<GradientEstimate> {
    spec.validate()?;
    check_dim(spec.dim(), w.len())?;
    if k >= w.len() {
        return Err(Error::invalid(
            "k",
            format!("dimension {k} out of range for d = {}", w.len()),
        ));
    }
    if n_samples < 2 {
        return Err(Error::invalid("n_samples", "must be >= 2"));
    }
    let chunks = n_samples.div_ceil(CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, &[stream::TRIAL, c as u64]);
            let len = CHUNK.min(n_samples - c * CHUNK);
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..len {
                let s = spec.draw(&mut rng);
                let g = s.features[k] * (sigmoid(dot(w, &s.features)) - f64::from(s.label));
                sum += g;
                sq += g * g;
            }
            (sum, sq)
        })
        .collect();
    let (sum, sq) = partial.iter().fold((0.0, 0.0), |(a, b), (s, q)| (a + s, b + q));
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(GradientEstimate {
        mean,
        std_error: (var / n).sqrt(),
        n: n_samples,
    })
}

/// Sign the expected gradient must have, or `None` where it is not
/// determined (`w_k mu_k > 0`).
pub fn predicted_gradient_sign(w_k: f64, mu_k: f64) -> Option<i8> {
    let sgn = |v: f64| -> i8 {
        if v > 0.0 {
            1
        } else if v < 0.0 {
            -1
        } else {
            0
        }
    };
    if mu_k == 0.0 {
        Some(sgn(w_k))
    } else if w_k * mu_k <= 0.0 {
        Some(-sgn(mu_k))
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignStatus {
    Agree,
    Disagree,
    /// `|mean| <= 3 SE`.
    Inconclusive,
    /// No prediction applies.
    NotCovered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Report {
    pub k: usize,
    pub w_k: f64,
    pub mu_k: f64,
    pub estimate: GradientEstimate,
    pub measured_sign: Option<i8>,
    pub predicted_sign: Option<i8>,
    pub status: SignStatus,
    /// Agreement, or an inconclusive estimate where the prediction is 0.
    pub passed: bool,
}

/// Compares the Monte Carlo gradient sign on one client to the prediction.
pub fn check_theorem3(
    spec: &GaussianClientSpec,
    w: &[f64],
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Theorem3Report> {
    let estimate = expected_gradient(spec, w, k, n_samples, seed)?;
    let measured = estimate.sign();
    let predicted = predicted_gradient_sign(w[k], spec.mu[k]);
    let status = match (predicted, measured) {
        (None, _) => SignStatus::NotCovered,
        (Some(_), None) => SignStatus::Inconclusive,
        (Some(p), Some(m)) if p == m => SignStatus::Agree,
        (Some(_), Some(_)) => SignStatus::Disagree,
    };
    let passed = match status {
        SignStatus::Agree => true,
        SignStatus::Inconclusive => predicted == Some(0),
        SignStatus::Disagree | SignStatus::NotCovered => false,
    };
    Ok(Theorem3Report {
        k,
        w_k: w[k],
        mu_k: spec.mu[k],
        estimate,
        measured_sign: measured,
        predicted_sign: predicted,
        status,
        passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseBound {
    Exact,
    AtLeast,
}

/// The consistency a trigger coordinate should show for a given `w_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCase {
    pub w_k: f64,
    pub mu_k: f64,
    pub expected_consistency: f64,
    pub bound: CaseBound,
}

impl ConsistencyCase {
    /// `w_k = 0`: `N'/N`. `w_k mu_k < 0`: 1. `w_k mu_k > 0`: at least `1 - N'/N`.
    pub fn predict(w_k: f64, mu_k: f64, n: usize, n_prime: usize) -> Self {
        let frac = n_prime as f64 / n as f64;
        let (expected_consistency, bound) = if w_k == 0.0 {
            (frac, CaseBound::Exact)
        } else if w_k * mu_k < 0.0 {
            (1.0, CaseBound::Exact)
        } else {
            (1.0 - frac, CaseBound::AtLeast)
        };
        ConsistencyCase {
            w_k,
            mu_k,
            expected_consistency,
            bound,
        }
    }

    pub fn holds(&self, q: f64) -> bool {
        const EPS: f64 = 1e-12;
        match self.bound {
            CaseBound::Exact => (q - self.expected_consistency).abs() < EPS,
            CaseBound::AtLeast => q >= self.expected_consistency - EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSign {
    pub client_id: usize,
    pub is_malicious: bool,
    pub estimate: GradientEstimate,
    /// Counted vote; an inconclusive estimate only counts as 0 where the
    /// expectation is exactly zero (`mu_k = 0`, `w_k = 0`).
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corollary1Report {
    pub feature_index: usize,
    pub clients: Vec<ClientSign>,
    pub measured_q: f64,
    pub case: ConsistencyCase,
    pub passed: bool,
}

/// Measures `q = |1/N sum_i sign(E_{D_i}[∇_{w_k} ℓ])|` on the trigger
/// coordinate and compares it to the case prediction.
///
/// The scenario must have zero trigger mean on every benign client and a
/// shared nonzero trigger mean on the malicious ones.
pub fn check_corollary1(scenario: &ScenarioConfig, w: &[f64], n_samples: usize, seed: u64) -> Result<Corollary1Report> {
    scenario.validate()?;
    check_dim(scenario.features, w.len())?;
    let k = scenario.trigger.feature_index;
    if scenario.benign().any(|c| c.mu[k] != 0.0) {
        return Err(Error::invalid(
            "scenario",
            "benign clients must have zero trigger-feature mean",
        ));
    }
    let mu_k = scenario
        .malicious()
        .map(|c| c.mu[k])
        .next()
        .ok_or_else(|| Error::invalid("num_malicious", "need at least one malicious client"))?;
    if mu_k == 0.0 {
        return Err(Error::invalid(
            "scenario",
            "malicious trigger-feature mean must be nonzero",
        ));
    }

    let clients = scenario
        .clients
        .iter()
        .map(|spec| {
            let estimate = expected_gradient(
                spec,
                w,
                k,
                n_samples,
                crate::rng::derive_seed(seed, &[spec.client_id as u64]),
            )?;
            let sign = match estimate.sign() {
                Some(s) => s,
                None if predicted_gradient_sign(w[k], spec.mu[k]) == Some(0) => 0,
                None => {
                    return Err(Error::Inconclusive {
                        client: spec.client_id,
                        mean: estimate.mean,
                        three_se: 3.0 * estimate.std_error,
                    })
                }
            };
            Ok(ClientSign {
                client_id: spec.client_id,
                is_malicious: spec.is_malicious,
                estimate,
                sign,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let votes: i64 = clients.iter().map(|c| i64::from(c.sign)).sum();
    let measured_q = votes.unsigned_abs() as f64 / scenario.num_clients as f64;
    let case = ConsistencyCase::predict(w[k], mu_k, scenario.num_clients, scenario.num_malicious);
    Ok(Corollary1Report {
        feature_index: k,
        passed: case.holds(measured_q),
        clients,
        measured_q,
        case,
    })
}

/// Per-dimension terms `∇_k ℓ * g_k` of the first-order loss change for an
/// update `g`. Positive terms are dimensions where `g` increases the loss.
pub fn first_order_terms(update: &[f64], client_grad: &[f64]) -> Result<Vec<f64>> {
    check_dim(update.len(), client_grad.len())?;
    Ok(update.iter().zip(client_grad).map(|(g, d)| g * d).collect())
}

/// First-order loss change `∇ℓ^T g`.
pub fn first_order_gain(update: &[f64], client_grad: &[f64]) -> Result<f64> {
    Ok(first_order_terms(update, client_grad)?.iter().sum())
}
