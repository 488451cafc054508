use crate::error::{Error, Result};
use crate::model::PseudoGradient;

use super::{column, common_dim, sorted_sum, ClientUpdate};

/// Sample-count-weighted mean of the updates.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<PseudoGradient> {
    let dim = common_dim(updates)?;
    let equal_counts = updates.iter().all(|u| u.sample_count == updates[0].sample_count);
    if equal_counts {
        return unweighted_mean(updates);
    }
    let total: usize = updates.iter().map(|u| u.sample_count).sum();
    let out = (0..dim)
        .map(|k| {
            let mut terms: Vec<f64> = updates.iter().map(|u| u.sample_count as f64 * u.gradient[k]).collect();
            sorted_sum(&mut terms) / total as f64
        })
        .collect();
    Ok(PseudoGradient(out))
}

/// Plain coordinate-wise mean, one vote per client.
pub fn unweighted_mean(updates: &[ClientUpdate]) -> Result<PseudoGradient> {
    let dim = common_dim(updates)?;
    let n = updates.len() as f64;
    Ok(PseudoGradient(
        (0..dim).map(|k| sorted_sum(&mut column(updates, k)) / n).collect(),
    ))
}

/// Values removed from each tail: `ceil(alpha * n)`.
pub fn trim_count(n: usize, alpha: f64) -> usize {
    // Absorbs representation error such as 0.3 * 10 = 3.0000000000000004.
    (alpha * n as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Alpha-trimmed mean of a list of scalars.
pub fn trimmed_mean_scalar(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("value list"));
    }
    let mut sorted = values.to_vec();
    trimmed_mean_sorted_in_place(&mut sorted, alpha)
}

fn trimmed_mean_sorted_in_place(values: &mut [f64], alpha: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::invalid("alpha", format!("must be >= 0, got {alpha}")));
    }
    let n = values.len();
    let trim = trim_count(n, alpha);
    if n <= 2 * trim {
        return Err(Error::OverTrimmed { n, trim });
    }
    values.sort_unstable_by(f64::total_cmp);
    let kept = &values[trim..n - trim];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Coordinate-wise trimmed mean. Sample counts are ignored and each
/// coordinate trims its own extremes.
pub fn trimmed_mean(updates: &[ClientUpdate], alpha: f64) -> Result<PseudoGradient> {
    let dim = common_dim(updates)?;
    (0..dim)
        .map(|k| trimmed_mean_sorted_in_place(&mut column(updates, k), alpha))
        .collect::<Result<Vec<_>>>()
        .map(PseudoGradient)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ups(rows: &[&[f64]]) -> Vec<ClientUpdate> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| ClientUpdate::new(i, r.to_vec(), 1))
            .collect()
    }

    #[test]
    fn fedavg_examples() {
        assert_eq!(fedavg(&ups(&[&[1.0, 1.0], &[3.0, 3.0]])).unwrap().0, vec![2.0, 2.0]);
        assert_eq!(
            fedavg(&ups(&[&[0.0; 3], &[0.0; 3], &[0.0; 3]])).unwrap().0,
            vec![0.0; 3]
        );
        let weighted = vec![ClientUpdate::new(0, vec![0.0], 1), ClientUpdate::new(1, vec![4.0], 3)];
        assert_eq!(fedavg(&weighted).unwrap().0, vec![3.0]);
    }

    #[test]
    fn fedavg_errors() {
        assert_eq!(fedavg(&[]), Err(Error::Empty("update list")));
        assert!(matches!(
            fedavg(&ups(&[&[1.0], &[1.0, 2.0]])),
            Err(Error::DimensionMismatch { expected: 1, actual: 2 })
        ));
        let zero = vec![ClientUpdate::new(0, vec![1.0], 0)];
        assert!(matches!(
            fedavg(&zero),
            Err(Error::InvalidParameter {
                name: "sample_count",
                ..
            })
        ));
    }

    #[test]
    fn trim_count_uses_ceiling() {
        assert_eq!(trim_count(5, 0.2), 1);
        assert_eq!(trim_count(10, 0.25), 3);
        assert_eq!(trim_count(10, 0.3), 3);
        assert_eq!(trim_count(10, 0.1), 1);
        assert_eq!(trim_count(10, 0.11), 2);
        assert_eq!(trim_count(7, 0.0), 0);
    }

    #[test]
    fn scalar_examples() {
        assert_eq!(trimmed_mean_scalar(&[1.0, 2.0, 3.0, 4.0, 100.0], 0.2).unwrap(), 3.0);
        assert_eq!(trimmed_mean_scalar(&[5.0; 4], 0.25).unwrap(), 5.0);
        let xs = [0.5, -2.0, 7.25, 1.0];
        assert_eq!(trimmed_mean_scalar(&xs, 0.0).unwrap(), (xs.iter().sum::<f64>()) / 4.0);
    }

    #[test]
    fn scalar_over_trimming() {
        assert_eq!(
            trimmed_mean_scalar(&[1.0, 2.0], 0.25),
            Err(Error::OverTrimmed { n: 2, trim: 1 })
        );
        assert_eq!(
            trimmed_mean_scalar(&[1.0, 2.0, 3.0, 4.0], 0.49),
            Err(Error::OverTrimmed { n: 4, trim: 2 })
        );
    }

    #[test]
    fn coordinate_examples() {
        let updates = ups(&[&[1.0, 9.0], &[2.0, 8.0], &[3.0, 7.0], &[4.0, 6.0], &[100.0, 5.0]]);
        let out = trimmed_mean(&updates, 0.2).unwrap();
        assert_eq!(out.0, vec![3.0, 7.0]);
        assert_eq!(trimmed_mean(&updates, 0.0).unwrap(), fedavg(&updates).unwrap());
    }

    #[test]
    fn single_outlier_is_removed() {
        let mut rows: Vec<Vec<f64>> = (0..9).map(|i| vec![-1.0 + 0.25 * i as f64]).collect();
        rows.push(vec![1e6]);
        let updates: Vec<ClientUpdate> = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| ClientUpdate::new(i, r, 1))
            .collect();
        let out = trimmed_mean(&updates, 0.25).unwrap();
        assert!((-1.0..=1.0).contains(&out[0]));
    }
}
