use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{quantile, BoundCheckReport};
use crate::aggregation::{trim_count, trimmed_mean_scalar};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// Order-statistic thresholds `(a, b)`: the `ceil(alpha N)`-th smallest and
/// the `ceil(alpha N)`-th largest of `ys`.
pub fn order_statistic_thresholds(ys: &[f64], alpha: f64) -> Result<(f64, f64)> {
    let n = ys.len();
    let m = trim_count(n, alpha);
    if m == 0 || 2 * m >= n {
        return Err(Error::invalid(
            "alpha",
            format!("need 0 < alpha*N < N/2, got alpha = {alpha}, N = {n}"),
        ));
    }
    let mut sorted = ys.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok((sorted[m - 1], sorted[n - m]))
}

/// Mean of `xs` clamped into `[a, b]`, with the thresholds taken from the
/// order statistics of a second sample `ys`.
pub fn modified_trimmed_mean(xs: &[f64], ys: &[f64], alpha: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty("sample"));
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    let (a, b) = order_statistic_thresholds(ys, alpha)?;
    Ok(xs.iter().map(|x| x.clamp(a, b)).sum::<f64>() / xs.len() as f64)
}

/// `alpha = 8 eta + 12 ln(4 / delta) / N`.
pub fn theorem1_alpha(eta: f64, delta: f64, n: usize) -> f64 {
    8.0 * eta + 12.0 * (4.0 / delta).ln() / n as f64
}

/// Gaussian benign distribution; `std = 0` is a point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalDist {
    pub mean: f64,
    pub std: f64,
}

impl NormalDist {
    pub const STANDARD: NormalDist = NormalDist { mean: 0.0, std: 1.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Params {
    pub dist: NormalDist,
    pub n: usize,
    /// Corrupted fraction; `ceil(eta N)` entries are replaced.
    pub eta: f64,
    pub delta: f64,
    pub c: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Replacement value for corrupted entries, alternating in sign.
pub const CORRUPTION_MAGNITUDE: f64 = 1e6;

/// Monte Carlo check of the trimmed-mean error bound
/// `|x̄ - E[x]| <= 10 sqrt(alpha) sigma + 2 c sigma + alpha |a + b - 2 x̄|`,
/// which must hold with probability at least `c^-4 (1 - 4 exp(-alpha N / 12))`.
///
/// `empirical_quantile` is the empirical quantile of `|x̄ - E[x]|` at the
/// guaranteed probability level; `theoretical_bound` is the median of the
/// per-trial right-hand side.
pub fn check_theorem1(p: &Theorem1Params) -> Result<BoundCheckReport> {
    if p.n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    if !(0.0..1.0).contains(&p.eta) {
        return Err(Error::invalid("eta", format!("must be in [0, 1), got {}", p.eta)));
    }
    if !(p.delta > 0.0 && p.delta < 1.0) {
        return Err(Error::invalid("delta", format!("must be in (0, 1), got {}", p.delta)));
    }
    if !(p.c > 1.0 && p.c.is_finite()) {
        return Err(Error::invalid("c", format!("must be > 1, got {}", p.c)));
    }
    if !(p.dist.std >= 0.0 && p.dist.std.is_finite() && p.dist.mean.is_finite()) {
        return Err(Error::invalid("sigma", "must be finite and >= 0"));
    }
    if p.trials == 0 {
        return Err(Error::invalid("trials", "must be >= 1"));
    }
    let alpha = theorem1_alpha(p.eta, p.delta, p.n);
    if alpha >= 0.5 {
        return Err(Error::invalid(
            "alpha",
            format!("8 eta + 12 ln(4/delta)/N = {alpha} must be < 0.5; increase N or delta, or lower eta"),
        ));
    }
    let n = p.n;
    let corrupted = trim_count(n, p.eta);
    let sigma = p.dist.std;

    let outcomes: Vec<(f64, f64)> = (0..p.trials)
        .into_par_iter()
        .map(|t| -> Result<(f64, f64)> {
            let mut rng = stream_rng(p.seed, &[stream::TRIAL, t as u64]);
            let mut xs: Vec<f64> = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    p.dist.mean + sigma * z
                })
                .collect();
            for (i, x) in xs.iter_mut().take(corrupted).enumerate() {
                *x = if i % 2 == 0 {
                    CORRUPTION_MAGNITUDE
                } else {
                    -CORRUPTION_MAGNITUDE
                };
            }
            let est = trimmed_mean_scalar(&xs, alpha)?;
            let (a, b) = order_statistic_thresholds(&xs, alpha)?;
            let rhs = 10.0 * alpha.sqrt() * sigma + 2.0 * p.c * sigma + alpha * (a + b - 2.0 * est).abs();
            Ok(((est - p.dist.mean).abs(), rhs))
        })
        .collect::<Result<_>>()?;

    let violations = outcomes.iter().filter(|(err, rhs)| err > rhs).count();
    let guaranteed = p.c.powi(-4) * (1.0 - 4.0 * (-alpha * n as f64 / 12.0).exp());
    let allowed = 1.0 - guaranteed;
    let errors: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let rhs: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
    let violation_rate = violations as f64 / p.trials as f64;

    Ok(BoundCheckReport {
        check: "theorem1".into(),
        trials: p.trials,
        violations,
        violation_rate,
        allowed_violation_rate: allowed,
        empirical_quantile: quantile(&errors, guaranteed.max(0.0)),
        theoretical_bound: quantile(&rhs, 0.5),
        informative: guaranteed > 0.0,
        passed: violation_rate <= allowed,
        parameters: [
            ("alpha", alpha),
            ("eta", p.eta),
            ("delta", p.delta),
            ("c", p.c),
            ("n", n as f64),
            ("corrupted", corrupted as f64),
            ("mean", p.dist.mean),
            ("sigma", sigma),
            ("guaranteed_probability", guaranteed),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect(),
    })
}
