use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BoundCheckReport;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// How likely a benign value is to carry the wrong sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignRatio {
    /// Nonzero mean/std ratio `phi`; Chebyshev bounds the flip probability by
    /// `phi^-2`.
    Phi(f64),
    /// Explicit per-client flip probability, used in place of `phi^-2` when
    /// `phi = 0`.
    FlipProbability(f64),
}

impl SignRatio {
    fn validate(self) -> Result<()> {
        match self {
            SignRatio::Phi(phi) if phi == 0.0 || !phi.is_finite() => Err(Error::invalid(
                "phi",
                "must be finite and nonzero; pass a flip probability for the phi = 0 case",
            )),
            SignRatio::FlipProbability(p) if !(0.0..=1.0).contains(&p) => Err(Error::invalid(
                "flip_probability",
                format!("must be in [0, 1], got {p}"),
            )),
            _ => Ok(()),
        }
    }

    fn per_flip(self) -> f64 {
        match self {
            SignRatio::Phi(phi) => phi.powi(-2),
            SignRatio::FlipProbability(p) => p,
        }
    }
}

/// The below-threshold probability bound and its summation limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Bound {
    pub raw: f64,
    pub clamped: f64,
    pub lower: i64,
    pub upper: i64,
}

fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn check_counts(n: usize, n_prime: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    if 2 * n_prime >= n {
        return Err(Error::invalid(
            "n_prime",
            format!("need N' < N/2, got N' = {n_prime}, N = {n}"),
        ));
    }
    Ok(())
}

/// `sum_{i = N - 2N' - tau}^{min(N, N - 2N' + tau)} C(N - N', i) phi^{-2i}`,
/// clamped to `[0, 1]`. `tau` is in vote counts.
pub fn theorem2_bound(ratio: SignRatio, n: usize, n_prime: usize, tau_count: u64) -> Result<Theorem2Bound> {
    ratio.validate()?;
    check_counts(n, n_prime)?;
    let base = n as i64 - 2 * n_prime as i64;
    let lower = base - tau_count as i64;
    let upper = (base + tau_count as i64).min(n as i64);
    let q = ratio.per_flip();
    let benign = (n - n_prime) as u64;
    let raw: f64 = (lower.max(0)..=upper)
        .map(|i| binomial(benign, i as u64) * q.powi(i as i32))
        .sum();
    Ok(Theorem2Bound {
        raw,
        clamped: raw.clamp(0.0, 1.0),
        lower,
        upper,
    })
}

/// Monte Carlo check of the AND-mask pass-probability bound.
///
/// Each trial draws `N - N'` benign values (Gaussian with mean `phi`, unit
/// std; or `±1` with the given flip probability) and `N'` adversarial values
/// of the opposite sign, and records whether `|sum_i sign(g_i)| < tau`.
/// `empirical_quantile` is that frequency and `theoretical_bound` the clamped
/// bound. A bound of 1 is vacuous and marked uninformative.
pub fn check_theorem2(
    ratio: SignRatio,
    n: usize,
    n_prime: usize,
    tau_count: u64,
    trials: usize,
    seed: u64,
) -> Result<BoundCheckReport> {
    let bound = theorem2_bound(ratio, n, n_prime, tau_count)?;
    if trials == 0 {
        return Err(Error::invalid("trials", "must be >= 1"));
    }
    let direction = match ratio {
        SignRatio::Phi(phi) => phi.signum(),
        SignRatio::FlipProbability(_) => 1.0,
    };
    let below = (0..trials)
        .into_par_iter()
        .filter(|&t| {
            let mut rng = stream_rng(seed, &[stream::TRIAL, t as u64]);
            let benign_votes: i64 = (0..n - n_prime)
                .map(|_| {
                    let v = match ratio {
                        SignRatio::Phi(phi) => {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            phi + z
                        }
                        SignRatio::FlipProbability(p) => {
                            if rng.random::<f64>() < p {
                                -1.0
                            } else {
                                1.0
                            }
                        }
                    };
                    if v > 0.0 {
                        1
                    } else if v < 0.0 {
                        -1
                    } else {
                        0
                    }
                })
                .sum();
            let adversarial_votes = -(n_prime as i64) * direction as i64;
            let benign_votes = benign_votes * direction as i64;
            (benign_votes + adversarial_votes).unsigned_abs() < tau_count
        })
        .count();

    let freq = below as f64 / trials as f64;
    let informative = bound.clamped < 1.0;
    let (phi, flip) = match ratio {
        SignRatio::Phi(phi) => (phi, phi.powi(-2)),
        SignRatio::FlipProbability(p) => (0.0, p),
    };
    Ok(BoundCheckReport {
        check: "theorem2".into(),
        trials,
        violations: below,
        violation_rate: freq,
        allowed_violation_rate: bound.clamped,
        empirical_quantile: freq,
        theoretical_bound: bound.clamped,
        informative,
        passed: !informative || freq <= bound.clamped,
        parameters: [
            ("phi", phi),
            ("flip_bound", flip),
            ("n", n as f64),
            ("n_prime", n_prime as f64),
            ("tau_count", tau_count as f64),
            ("sum_lower", bound.lower as f64),
            ("sum_upper", bound.upper as f64),
            ("raw_bound", bound.raw),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_term() {
        let b = theorem2_bound(SignRatio::Phi(2.0), 1, 0, 0).unwrap();
        assert_eq!((b.lower, b.upper), (1, 1));
        assert_eq!(b.raw, 0.25);
        assert_eq!(b.clamped, 0.25);
    }

    #[test]
    fn vanishes_for_large_phi() {
        let b = theorem2_bound(SignRatio::Phi(1e6), 10, 2, 2).unwrap();
        assert!(b.raw < 1e-40);
    }

    #[test]
    fn clamps_above_one() {
        let b = theorem2_bound(SignRatio::Phi(1.01), 10, 2, 4).unwrap();
        assert!(b.raw > 1.0);
        assert_eq!(b.clamped, 1.0);
    }

    #[test]
    fn limits_for_ten_clients() {
        let b = theorem2_bound(SignRatio::Phi(1.5), 10, 2, 2).unwrap();
        assert_eq!((b.lower, b.upper), (4, 8));
        let b = theorem2_bound(SignRatio::Phi(1.5), 10, 2, 0).unwrap();
        assert_eq!((b.lower, b.upper), (6, 6));
        assert!((b.raw - 28.0 * 1.5f64.powi(-12)).abs() < 1e-15);
        let b = theorem2_bound(SignRatio::Phi(3.0), 10, 0, 5).unwrap();
        assert_eq!((b.lower, b.upper), (5, 10));
    }

    #[test]
    fn zero_phi_needs_substitute() {
        assert!(matches!(
            theorem2_bound(SignRatio::Phi(0.0), 10, 2, 2),
            Err(Error::InvalidParameter { name: "phi", .. })
        ));
        let b = theorem2_bound(SignRatio::FlipProbability(0.5), 1, 0, 0).unwrap();
        assert_eq!(b.raw, 0.5);
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(8, 6), 28.0);
        assert_eq!(binomial(8, 0), 1.0);
        assert_eq!(binomial(8, 9), 0.0);
        assert_eq!(binomial(10, 5), 252.0);
    }

    #[test]
    fn monotone_in_phi() {
        for tau in [0u64, 1, 2, 3, 6] {
            let mut prev = f64::INFINITY;
            for i in 1..200 {
                let phi = 0.5 + i as f64 * 0.05;
                let b = theorem2_bound(SignRatio::Phi(phi), 10, 2, tau).unwrap().raw;
                assert!(b <= prev, "tau={tau} phi={phi}");
                prev = b;
            }
        }
    }

    #[test]
    fn huge_phi_never_drops_below_tau() {
        let r = check_theorem2(SignRatio::Phi(100.0), 10, 2, 4, 10_000, 3).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.passed);
    }
}
