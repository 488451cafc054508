//! Server-side aggregation rules.
//!
//! Every coordinate-wise mean in this module sums its terms in ascending
//! value order. The result is then a function of the multiset of inputs only,
//! so all aggregators are exactly (bitwise) invariant to client order, and
//! `invariant_aggregate(tau = 0, alpha = 0)` is bitwise equal to `fedavg` on
//! equal sample counts.

mod krum;
mod mask;
mod mean;
mod sign;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PseudoGradient;

pub use krum::{krum, krum_then_trimmed, multi_krum, multi_krum_cosine, KrumDistance};
pub use mask::{and_mask, apply_mask, invariant_aggregate, mv_ratio_mask, sign_consistency, sign_consistency_all};
pub use mean::{fedavg, trim_count, trimmed_mean, trimmed_mean_scalar, unweighted_mean};
pub use sign::{sign_sgd_majority, weak_dp};

/// One client's contribution to a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub gradient: PseudoGradient,
    pub sample_count: usize,
}

impl ClientUpdate {
    pub fn new(client_id: usize, gradient: impl Into<PseudoGradient>, sample_count: usize) -> Self {
        ClientUpdate {
            client_id,
            gradient: gradient.into(),
            sample_count,
        }
    }
}

/// Per-dimension keep/drop bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaskVector(pub Vec<bool>);

impl MaskVector {
    pub fn ones(dim: usize) -> Self {
        MaskVector(vec![true; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn pass_fraction(&self) -> f64 {
        if self.0.is_empty() {
            return 1.0;
        }
        self.0.iter().filter(|&&b| b).count() as f64 / self.0.len() as f64
    }
}

/// Which aggregation rule to run, with its hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AggregatorConfig {
    #[serde(deserialize_with = "no_parameters")]
    Fedavg,
    TrimmedMean {
        alpha: f64,
    },
    /// AND-mask applied to the plain (sample-weighted) mean.
    AndMask {
        tau: f64,
    },
    /// AND-mask composed with the coordinate-wise trimmed mean.
    Invariant {
        tau: f64,
        alpha: f64,
    },
    Krum {
        num_malicious: usize,
    },
    MultiKrum {
        num_malicious: usize,
        krum_select: usize,
    },
    MultiKrumCosine {
        num_malicious: usize,
        krum_select: usize,
    },
    KrumThenTrimmed {
        num_malicious: usize,
        krum_select: usize,
        alpha: f64,
    },
    SignSgd {
        sign_lr: f64,
    },
    WeakDp {
        clip_norm: f64,
        noise_std: f64,
    },
    /// Mean/standard-deviation ratio mask composed with the trimmed mean.
    MvRatioMask {
        mv_threshold: f64,
        alpha: f64,
    },
}

impl AggregatorConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AggregatorConfig::Fedavg => "fedavg",
            AggregatorConfig::TrimmedMean { .. } => "trimmed_mean",
            AggregatorConfig::AndMask { .. } => "and_mask",
            AggregatorConfig::Invariant { .. } => "invariant",
            AggregatorConfig::Krum { .. } => "krum",
            AggregatorConfig::MultiKrum { .. } => "multi_krum",
            AggregatorConfig::MultiKrumCosine { .. } => "multi_krum_cosine",
            AggregatorConfig::KrumThenTrimmed { .. } => "krum_then_trimmed",
            AggregatorConfig::SignSgd { .. } => "sign_sgd",
            AggregatorConfig::WeakDp { .. } => "weak_dp",
            AggregatorConfig::MvRatioMask { .. } => "mv_ratio_mask",
        }
    }

    /// Parameter names accepted by each kind, in declaration order.
    pub fn parameter_names(kind: &str) -> Option<&'static [&'static str]> {
        Some(match kind {
            "fedavg" => &[],
            "trimmed_mean" => &["alpha"],
            "and_mask" => &["tau"],
            "invariant" => &["tau", "alpha"],
            "krum" => &["num_malicious"],
            "multi_krum" | "multi_krum_cosine" => &["num_malicious", "krum_select"],
            "krum_then_trimmed" => &["num_malicious", "krum_select", "alpha"],
            "sign_sgd" => &["sign_lr"],
            "weak_dp" => &["clip_norm", "noise_std"],
            "mv_ratio_mask" => &["mv_threshold", "alpha"],
            _ => return None,
        })
    }

    /// Range checks that do not depend on the number of updates.
    pub fn validate(&self) -> Result<()> {
        use AggregatorConfig::*;
        match *self {
            Fedavg | Krum { .. } => Ok(()),
            TrimmedMean { alpha } => check_alpha(alpha),
            AndMask { tau } => check_tau(tau),
            Invariant { tau, alpha } => check_tau(tau).and(check_alpha(alpha)),
            MultiKrum { krum_select, .. } | MultiKrumCosine { krum_select, .. } => check_select(krum_select),
            KrumThenTrimmed { krum_select, alpha, .. } => check_select(krum_select).and(check_alpha(alpha)),
            SignSgd { sign_lr } => check_positive("sign_lr", sign_lr),
            WeakDp { clip_norm, noise_std } => {
                check_positive("clip_norm", clip_norm)?;
                if !(noise_std.is_finite() && noise_std >= 0.0) {
                    return Err(Error::invalid("noise_std", format!("must be >= 0, got {noise_std}")));
                }
                Ok(())
            }
            MvRatioMask { mv_threshold, alpha } => check_positive("mv_threshold", mv_threshold).and(check_alpha(alpha)),
        }
    }

    /// The sign-consistency threshold if this rule applies an AND-mask.
    pub fn tau(&self) -> Option<f64> {
        match *self {
            AggregatorConfig::AndMask { tau } | AggregatorConfig::Invariant { tau, .. } => Some(tau),
            _ => None,
        }
    }

    /// Aggregates one round. `seed` is only consumed by `weak_dp`.
    pub fn aggregate(&self, updates: &[ClientUpdate], seed: u64) -> Result<Aggregate> {
        self.validate()?;
        use AggregatorConfig::*;
        let (gradient, mask) = match *self {
            Fedavg => (fedavg(updates)?, None),
            TrimmedMean { alpha } => (trimmed_mean(updates, alpha)?, None),
            AndMask { tau } => {
                let mask = and_mask(updates, tau)?;
                (apply_mask(&mask, &fedavg(updates)?), Some(mask))
            }
            Invariant { tau, alpha } => {
                let mask = and_mask(updates, tau)?;
                (apply_mask(&mask, &trimmed_mean(updates, alpha)?), Some(mask))
            }
            Krum { num_malicious } => (krum(updates, num_malicious)?, None),
            MultiKrum {
                num_malicious,
                krum_select,
            } => (multi_krum(updates, num_malicious, krum_select)?, None),
            MultiKrumCosine {
                num_malicious,
                krum_select,
            } => (multi_krum_cosine(updates, num_malicious, krum_select)?, None),
            KrumThenTrimmed {
                num_malicious,
                krum_select,
                alpha,
            } => (krum_then_trimmed(updates, num_malicious, krum_select, alpha)?, None),
            SignSgd { sign_lr } => (sign_sgd_majority(updates, sign_lr)?, None),
            WeakDp { clip_norm, noise_std } => (weak_dp(updates, clip_norm, noise_std, seed)?, None),
            MvRatioMask { mv_threshold, alpha } => {
                let mask = mv_ratio_mask(updates, mv_threshold)?;
                (apply_mask(&mask, &trimmed_mean(updates, alpha)?), Some(mask))
            }
        };
        Ok(Aggregate { gradient, mask })
    }
}

/// Serde ignores extra keys on internally tagged unit variants; this makes
/// `fedavg` reject them like every other kind.
fn no_parameters<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<(), D::Error> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct NoParameters {}
    NoParameters::deserialize(d).map(|_| ())
}

/// Output of one aggregation call.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub gradient: PseudoGradient,
    /// Present for the masking rules.
    pub mask: Option<MaskVector>,
}

fn check_tau(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::invalid("tau", format!("must be in [0, 1], got {tau}")))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..0.5).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::invalid("alpha", format!("must be in [0, 0.5), got {alpha}")))
    }
}

fn check_select(m: usize) -> Result<()> {
    if m >= 1 {
        Ok(())
    } else {
        Err(Error::invalid("krum_select", "must be >= 1"))
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be > 0, got {v}")))
    }
}

/// Validates a non-empty, equal-dimension update list and returns `d`.
pub(crate) fn common_dim(updates: &[ClientUpdate]) -> Result<usize> {
    let first = updates.first().ok_or(Error::Empty("update list"))?;
    let dim = first.gradient.dim();
    for u in updates {
        if u.gradient.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: u.gradient.dim(),
            });
        }
        if u.sample_count == 0 {
            return Err(Error::invalid(
                "sample_count",
                format!("client {} reports 0 samples", u.client_id),
            ));
        }
    }
    Ok(dim)
}

pub(crate) fn column(updates: &[ClientUpdate], k: usize) -> Vec<f64> {
    updates.iter().map(|u| u.gradient[k]).collect()
}

fn total_cmp(a: &f64, b: &f64) -> std::cmp::Ordering {
    a.total_cmp(b)
}

/// Sums in ascending order; the result depends only on the multiset.
pub(crate) fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(total_cmp);
    values.iter().sum()
}

pub(crate) fn sign(v: f64) -> i64 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}
