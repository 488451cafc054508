//! Distance-based filtering (Krum family).
//!
//! Each update is scored by the sum of its distances to its `N - f - 2`
//! nearest neighbours; lower is better. Ties go to the lower client id.

use crate::error::{Error, Result};
use crate::model::{dot, PseudoGradient};

use super::{common_dim, trimmed_mean, unweighted_mean, ClientUpdate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KrumDistance {
    /// Squared Euclidean distance.
    Euclidean,
    /// `1 - cosine similarity`; a zero vector has similarity 0 to everything.
    Cosine,
}

impl KrumDistance {
    fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KrumDistance::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            KrumDistance::Cosine => {
                let na = dot(a, a).sqrt();
                let nb = dot(b, b).sqrt();
                let sim = if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    dot(a, b) / (na * nb)
                };
                1.0 - sim
            }
        }
    }
}

/// Krum score of every update, in input order.
pub fn krum_scores(updates: &[ClientUpdate], num_malicious: usize, distance: KrumDistance) -> Result<Vec<f64>> {
    common_dim(updates)?;
    let n = updates.len();
    if n < num_malicious + 3 {
        return Err(Error::TooFewUpdates {
            what: "Krum scoring (N >= f + 3)",
            needed: num_malicious + 3,
            actual: n,
        });
    }
    let neighbours = n - num_malicious - 2;
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance.between(&updates[i].gradient, &updates[j].gradient);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).collect();
            row.sort_unstable_by(f64::total_cmp);
            row[..neighbours].iter().sum()
        })
        .collect())
}

/// Indices of the `m` best-scoring updates, best first.
pub fn krum_selection(
    updates: &[ClientUpdate],
    num_malicious: usize,
    m: usize,
    distance: KrumDistance,
) -> Result<Vec<usize>> {
    let scores = krum_scores(updates, num_malicious, distance)?;
    if m == 0 || m > updates.len() {
        return Err(Error::invalid(
            "krum_select",
            format!("must be in [1, {}], got {m}", updates.len()),
        ));
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .total_cmp(&scores[b])
            .then(updates[a].client_id.cmp(&updates[b].client_id))
    });
    order.truncate(m);
    Ok(order)
}

fn survivors(updates: &[ClientUpdate], picked: &[usize]) -> Vec<ClientUpdate> {
    picked.iter().map(|&i| updates[i].clone()).collect()
}

/// The single lowest-score update.
pub fn krum(updates: &[ClientUpdate], num_malicious: usize) -> Result<PseudoGradient> {
    let picked = krum_selection(updates, num_malicious, 1, KrumDistance::Euclidean)?;
    Ok(updates[picked[0]].gradient.clone())
}

/// Uniform average of the `m` lowest-score updates.
pub fn multi_krum(updates: &[ClientUpdate], num_malicious: usize, m: usize) -> Result<PseudoGradient> {
    let picked = krum_selection(updates, num_malicious, m, KrumDistance::Euclidean)?;
    unweighted_mean(&survivors(updates, &picked))
}

/// Multi-Krum with cosine distance.
pub fn multi_krum_cosine(updates: &[ClientUpdate], num_malicious: usize, m: usize) -> Result<PseudoGradient> {
    let picked = krum_selection(updates, num_malicious, m, KrumDistance::Cosine)?;
    unweighted_mean(&survivors(updates, &picked))
}

/// Multi-Krum filtering followed by a coordinate-wise trimmed mean of the
/// survivors.
pub fn krum_then_trimmed(
    updates: &[ClientUpdate],
    num_malicious: usize,
    m: usize,
    alpha: f64,
) -> Result<PseudoGradient> {
    let picked = krum_selection(updates, num_malicious, m, KrumDistance::Euclidean)?;
    trimmed_mean(&survivors(updates, &picked), alpha)
}
