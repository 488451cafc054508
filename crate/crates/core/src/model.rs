//! Linear model with a sigmoid link and logistic loss, plus local client
//! training that produces pseudo-gradients.

use std::ops::{Deref, DerefMut};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Model parameters. No intercept; add a constant feature if one is needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub Vec<f64>);

/// Client update `w_{t-1} - w_{t,i}` for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PseudoGradient(pub Vec<f64>);

macro_rules! vector_newtype {
    ($ty:ident) => {
        impl $ty {
            pub fn zeros(dim: usize) -> Self {
                $ty(vec![0.0; dim])
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn norm(&self) -> f64 {
                self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
        }

        impl Deref for $ty {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $ty {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $ty {
            fn from(v: Vec<f64>) -> Self {
                $ty(v)
            }
        }
    };
}

vector_newtype!(WeightVector);
vector_newtype!(PseudoGradient);

impl WeightVector {
    /// Applies the server update `w - aggregate`.
    pub fn step(&self, aggregate: &PseudoGradient) -> Result<WeightVector> {
        check_dim(self.dim(), aggregate.dim())?;
        Ok(WeightVector(
            self.iter().zip(aggregate.iter()).map(|(w, g)| w - g).collect(),
        ))
    }
}

/// One labelled example. `label` is 0 or 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: u8,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::invalid("label", format!("{label} is not in {{0, 1}}")));
        }
        Ok(Sample { features, label })
    }

    fn target(&self) -> f64 {
        f64::from(self.label)
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic function, evaluated on the branch that never overflows `exp`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of a probability `z` against a binary label.
pub fn logistic_loss(z: f64, y: u8) -> Result<f64> {
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::Domain(format!("logistic loss needs z in (0, 1), got {z}")));
    }
    Ok(match y {
        1 => -z.ln(),
        0 => -(-z).ln_1p(),
        other => return Err(Error::invalid("label", format!("{other} is not in {{0, 1}}"))),
    })
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// `logistic_loss(sigmoid(w·x), y)` computed from the logit, finite for any
/// finite logit.
pub fn sample_loss(w: &[f64], sample: &Sample) -> f64 {
    let z = dot(w, &sample.features);
    if sample.label == 1 {
        softplus(-z)
    } else {
        softplus(z)
    }
}

/// Gradient of the sample loss with respect to `w`: `x * (s(w·x) - y)`.
pub fn point_gradient(w: &[f64], sample: &Sample) -> Vec<f64> {
    let residual = sigmoid(dot(w, &sample.features)) - sample.target();
    sample.features.iter().map(|x| x * residual).collect()
}

/// Decision rule; a logit of exactly zero is class 1.
pub fn predict(w: &[f64], x: &[f64]) -> u8 {
    u8::from(dot(w, x) >= 0.0)
}

/// Local optimizer schedule for one round of client training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTraining {
    pub lr: f64,
    /// May be fractional: `ceil(epochs * batches_per_epoch)` steps, at least one.
    pub epochs: f64,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
}

impl LocalTraining {
    pub fn full_batch(lr: f64, epochs: f64) -> Self {
        LocalTraining {
            lr,
            epochs,
            batch_size: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("lr", format!("must be > 0, got {}", self.lr)));
        }
        if !(self.epochs.is_finite() && self.epochs > 0.0) {
            return Err(Error::invalid("epochs", format!("must be > 0, got {}", self.epochs)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        Ok(())
    }

    /// Number of SGD steps taken on a dataset of `n` samples.
    pub fn num_steps(&self, n: usize) -> usize {
        let batches = self.batches_per_epoch(n);
        // Tolerance keeps e.g. 0.3 * 10 from rounding up to 4.
        ((self.epochs * batches as f64 - 1e-9).ceil() as usize).max(1)
    }

    fn batch_len(&self, n: usize) -> usize {
        self.batch_size.unwrap_or(n).clamp(1, n.max(1))
    }

    fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_len(n))
    }
}

/// Runs seeded mini-batch SGD from `w0` and returns `w0 - w_final`.
///
/// The pseudo-gradient is accumulated directly as the sum of `lr * batch_grad`
/// over steps, so a single full-batch step returns exactly `lr` times the mean
/// point gradient. Samples are reshuffled at the start of every epoch; with a
/// single batch per epoch the natural order is kept.
pub fn local_train(
    w0: &WeightVector,
    data: &[Sample],
    schedule: &LocalTraining,
    rng: &mut StreamRng,
) -> Result<PseudoGradient> {
    if data.is_empty() {
        return Err(Error::Empty("local training dataset"));
    }
    schedule.validate()?;
    let dim = w0.dim();
    for s in data {
        check_dim(dim, s.features.len())?;
    }

    let n = data.len();
    let batch_len = schedule.batch_len(n);
    let batches = schedule.batches_per_epoch(n);
    let steps = schedule.num_steps(n);

    let mut order: Vec<usize> = (0..n).collect();
    let mut w = w0.0.clone();
    let mut delta = vec![0.0; dim];
    let mut grad = vec![0.0; dim];

    for step in 0..steps {
        let b = step % batches;
        if b == 0 && batches > 1 {
            order.shuffle(rng);
        }
        let batch = &order[b * batch_len..((b + 1) * batch_len).min(n)];

        grad.iter_mut().for_each(|g| *g = 0.0);
        for &i in batch {
            let sample = &data[i];
            let residual = sigmoid(dot(&w, &sample.features)) - sample.target();
            for (g, x) in grad.iter_mut().zip(&sample.features) {
                *g += x * residual;
            }
        }
        let m = batch.len() as f64;
        for k in 0..dim {
            delta[k] += schedule.lr * (grad[k] / m);
            w[k] = w0[k] - delta[k];
        }
    }
    Ok(PseudoGradient(delta))
}
