use crate::error::{Error, Result};
use crate::model::PseudoGradient;

use super::{column, common_dim, sign, sorted_sum, trimmed_mean, ClientUpdate, MaskVector};

/// `|1/N * sum_i sign(g_{i,k})|`, one vote per client, `sign(0) = 0`.
pub fn sign_consistency(updates: &[ClientUpdate], k: usize) -> Result<f64> {
    let dim = common_dim(updates)?;
    if k >= dim {
        return Err(Error::invalid("k", format!("dimension {k} out of range for d = {dim}")));
    }
    Ok(consistency_of(updates, k))
}

fn consistency_of(updates: &[ClientUpdate], k: usize) -> f64 {
    let votes: i64 = updates.iter().map(|u| sign(u.gradient[k])).sum();
    votes.unsigned_abs() as f64 / updates.len() as f64
}

/// Sign consistency of every dimension.
pub fn sign_consistency_all(updates: &[ClientUpdate]) -> Result<Vec<f64>> {
    let dim = common_dim(updates)?;
    Ok((0..dim).map(|k| consistency_of(updates, k)).collect())
}

/// Keeps dimension `k` iff its sign consistency is at least `tau`.
pub fn and_mask(updates: &[ClientUpdate], tau: f64) -> Result<MaskVector> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid("tau", format!("must be in [0, 1], got {tau}")));
    }
    Ok(MaskVector(
        sign_consistency_all(updates)?.into_iter().map(|c| c >= tau).collect(),
    ))
}

/// Masked coordinates become exactly `0.0`.
pub fn apply_mask(mask: &MaskVector, g: &PseudoGradient) -> PseudoGradient {
    debug_assert_eq!(mask.dim(), g.dim());
    PseudoGradient(
        mask.0
            .iter()
            .zip(g.iter())
            .map(|(&keep, &v)| if keep { v } else { 0.0 })
            .collect(),
    )
}

/// AND-mask times coordinate-wise trimmed mean.
pub fn invariant_aggregate(updates: &[ClientUpdate], tau: f64, alpha: f64) -> Result<PseudoGradient> {
    let mask = and_mask(updates, tau)?;
    let mean = trimmed_mean(updates, alpha)?;
    Ok(apply_mask(&mask, &mean))
}

/// Keeps dimension `k` iff `|mean| / sample_sd >= mv_threshold`.
///
/// Zero spread keeps the dimension when the mean is nonzero and drops it when
/// the mean is zero.
pub fn mv_ratio_mask(updates: &[ClientUpdate], mv_threshold: f64) -> Result<MaskVector> {
    if updates.len() < 2 {
        return Err(Error::TooFewUpdates {
            what: "sample variance",
            needed: 2,
            actual: updates.len(),
        });
    }
    if !(mv_threshold.is_finite() && mv_threshold > 0.0) {
        return Err(Error::invalid(
            "mv_threshold",
            format!("must be > 0, got {mv_threshold}"),
        ));
    }
    let dim = common_dim(updates)?;
    let n = updates.len() as f64;
    let bits = (0..dim)
        .map(|k| {
            let mut xs = column(updates, k);
            let mean = sorted_sum(&mut xs) / n;
            let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
            let sd = (ss / (n - 1.0)).sqrt();
            if sd == 0.0 {
                mean != 0.0
            } else {
                mean.abs() / sd >= mv_threshold
            }
        })
        .collect();
    Ok(MaskVector(bits))
}
