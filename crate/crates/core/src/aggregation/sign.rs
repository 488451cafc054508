use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::PseudoGradient;
use crate::rng::stream_rng;

use super::{column, common_dim, sign, unweighted_mean, ClientUpdate};

/// Per coordinate: `sign_lr * sign(sum_i sign(g_{i,k}))`.
pub fn sign_sgd_majority(updates: &[ClientUpdate], sign_lr: f64) -> Result<PseudoGradient> {
    if !(sign_lr.is_finite() && sign_lr > 0.0) {
        return Err(Error::invalid("sign_lr", format!("must be > 0, got {sign_lr}")));
    }
    let dim = common_dim(updates)?;
    Ok(PseudoGradient(
        (0..dim)
            .map(|k| {
                let votes: i64 = column(updates, k).into_iter().map(sign).sum();
                sign_lr * votes.signum() as f64
            })
            .collect(),
    ))
}

/// Clip each update to L2 norm `clip_norm`, average, then add i.i.d.
/// `N(0, noise_std)` noise per coordinate from a stream keyed by `seed`.
pub fn weak_dp(updates: &[ClientUpdate], clip_norm: f64, noise_std: f64, seed: u64) -> Result<PseudoGradient> {
    if !(clip_norm.is_finite() && clip_norm > 0.0) {
        return Err(Error::invalid("clip_norm", format!("must be > 0, got {clip_norm}")));
    }
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::invalid("noise_std", format!("must be >= 0, got {noise_std}")));
    }
    common_dim(updates)?;
    let clipped: Vec<ClientUpdate> = updates
        .iter()
        .map(|u| {
            let norm = u.gradient.norm();
            let mut c = u.clone();
            if norm > clip_norm {
                let factor = clip_norm / norm;
                c.gradient.iter_mut().for_each(|v| *v *= factor);
            }
            c
        })
        .collect();
    let mut out = unweighted_mean(&clipped)?;
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).map_err(|e| Error::invalid("noise_std", e.to_string()))?;
        let mut rng = stream_rng(seed, &[]);
        out.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::fedavg;

    fn ups(rows: &[&[f64]]) -> Vec<ClientUpdate> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| ClientUpdate::new(i, r.to_vec(), 1))
            .collect()
    }

    #[test]
    fn majority_examples() {
        assert_eq!(
            sign_sgd_majority(&ups(&[&[1.0], &[2.0], &[-1.0]]), 0.01).unwrap().0,
            vec![0.01]
        );
        assert_eq!(sign_sgd_majority(&ups(&[&[1.0], &[-2.0]]), 0.01).unwrap().0, vec![0.0]);
        assert_eq!(
            sign_sgd_majority(&ups(&[&[100.0], &[-1.0], &[-1.0]]), 0.01).unwrap().0,
            vec![-0.01]
        );
    }

    #[test]
    fn weak_dp_without_noise_is_the_mean() {
        let u = ups(&[&[0.1, 0.2], &[-0.3, 0.0], &[0.2, 0.2]]);
        assert_eq!(weak_dp(&u, 10.0, 0.0, 1).unwrap(), fedavg(&u).unwrap());
    }

    #[test]
    fn weak_dp_clips_to_norm() {
        let u = ups(&[&[3.0, 4.0]]);
        assert_eq!(weak_dp(&u, 2.5, 0.0, 1).unwrap().0, vec![1.5, 2.0]);
    }

    #[test]
    fn weak_dp_is_seeded() {
        let u = ups(&[&[0.1, 0.2], &[0.3, 0.4]]);
        let a = weak_dp(&u, 1.0, 0.5, 42).unwrap();
        assert_eq!(a, weak_dp(&u, 1.0, 0.5, 42).unwrap());
        assert_ne!(a, weak_dp(&u, 1.0, 0.5, 43).unwrap());
    }
}
