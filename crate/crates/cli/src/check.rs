//! `check`: Monte Carlo verification of the theoretical guarantees.

use fedinv_core::synthdata::{GaussianClientSpec, ScenarioConfig};
use fedinv_core::theory::{
    check_corollary1, check_theorem1, check_theorem2, check_theorem3, SignRatio, Theorem1Params, Theorem3Report,
};
use serde::Serialize;
use serde_json::json;

use crate::error::{CliError, CliResult};

/// A finished check: its verdict and a JSON report.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub passed: bool,
    pub report: serde_json::Value,
}

fn outcome<T: Serialize>(check: &str, passed: bool, report: &T) -> CheckOutcome {
    CheckOutcome {
        passed,
        report: json!({ "check": check, "passed": passed, "report": report }),
    }
}

pub fn t1(params: &Theorem1Params) -> CliResult<CheckOutcome> {
    let r = check_theorem1(params)?;
    Ok(outcome("t1", r.passed, &r))
}

/// Threshold in votes: an explicit count wins over a normalized `tau`,
/// which is converted with `round(tau N)`.
pub fn tau_votes(n: usize, tau: Option<f64>, tau_count: Option<u64>) -> CliResult<u64> {
    match (tau_count, tau) {
        (Some(c), _) => Ok(c),
        (None, Some(t)) if (0.0..=1.0).contains(&t) => Ok((t * n as f64).round() as u64),
        (None, Some(t)) => Err(CliError::validation(format!(
            "invalid parameter `tau`: must be in [0, 1], got {t}"
        ))),
        (None, None) => Ok(0),
    }
}

pub fn sign_ratio(phi: Option<f64>, flip_probability: Option<f64>) -> CliResult<SignRatio> {
    match (phi, flip_probability) {
        (_, Some(p)) => Ok(SignRatio::FlipProbability(p)),
        (Some(phi), None) if phi != 0.0 => Ok(SignRatio::Phi(phi)),
        _ => Err(CliError::validation(
            "t2 needs a nonzero --phi, or --flip-probability when phi = 0",
        )),
    }
}

pub fn t2(
    ratio: SignRatio,
    n: usize,
    n_prime: usize,
    tau_count: u64,
    trials: usize,
    seed: u64,
) -> CliResult<CheckOutcome> {
    let r = check_theorem2(ratio, n, n_prime, tau_count, trials, seed)?;
    Ok(outcome("t2", r.passed, &r))
}

/// The covered cells of the sign grid: `mu_k = 0`, or `w_k mu_k <= 0`.
pub fn t3_grid() -> Vec<(f64, f64)> {
    let mut cells = Vec::new();
    for mu in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        for w in [-0.5, 0.0, 0.5] {
            if mu == 0.0 || w * mu <= 0.0 {
                cells.push((w, mu));
            }
        }
    }
    cells
}

/// Checks each `(w_k, mu_k)` cell on a one-feature client with standard
/// deviation `sigma`. Cells outside the covered cases are a usage error.
pub fn t3(cells: &[(f64, f64)], sigma: f64, n_samples: usize, seed: u64) -> CliResult<CheckOutcome> {
    let reports = cells
        .iter()
        .enumerate()
        .map(|(i, &(w, mu))| {
            if mu != 0.0 && w * mu > 0.0 {
                return Err(CliError::validation(format!(
                    "cell w_k = {w}, mu_k = {mu}: no sign prediction when w_k mu_k > 0"
                )));
            }
            let spec = GaussianClientSpec::new(0, vec![mu], vec![sigma]);
            Ok(check_theorem3(&spec, &[w], 0, n_samples, seed.wrapping_add(i as u64))?)
        })
        .collect::<CliResult<Vec<Theorem3Report>>>()?;
    let passed = reports.iter().all(|r| r.passed);
    Ok(outcome("t3", passed, &reports))
}

pub fn c1(scenario: &ScenarioConfig, w: &[f64], n_samples: usize, seed: u64) -> CliResult<CheckOutcome> {
    let r = check_corollary1(scenario, w, n_samples, seed)?;
    Ok(outcome("c1", r.passed, &r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedinv_core::synthdata::make_appendix_d1_scenario;

    #[test]
    fn t2_needs_a_flip_source() {
        assert!(sign_ratio(Some(0.0), None).is_err());
        assert!(sign_ratio(None, None).is_err());
        assert_eq!(
            sign_ratio(Some(0.0), Some(0.3)).unwrap(),
            SignRatio::FlipProbability(0.3)
        );
        assert_eq!(sign_ratio(Some(2.0), None).unwrap(), SignRatio::Phi(2.0));
    }

    #[test]
    fn tau_conversion() {
        assert_eq!(tau_votes(10, Some(0.2), None).unwrap(), 2);
        assert_eq!(tau_votes(10, Some(0.2), Some(4)).unwrap(), 4);
        assert_eq!(tau_votes(10, None, None).unwrap(), 0);
        assert!(tau_votes(10, Some(1.5), None).is_err());
    }

    #[test]
    fn grid_covers_the_predicted_cases() {
        let g = t3_grid();
        assert_eq!(g.len(), 11);
        assert!(g.iter().all(|&(w, mu)| mu == 0.0 || w * mu <= 0.0));
        let out = t3(&g, 1.0, 100_000, 1).unwrap();
        assert!(out.passed, "{}", out.report);
        assert!(t3(&[(0.5, 0.5)], 1.0, 1000, 1).is_err());
    }

    #[test]
    fn c1_at_zero_trigger_weight() {
        let out = c1(&make_appendix_d1_scenario(0), &[1.0, 0.0], 200_000, 3).unwrap();
        assert!(out.passed, "{}", out.report);
        assert_eq!(out.report["report"]["measured_q"], 0.2);
    }
}
