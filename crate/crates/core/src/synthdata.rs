//! Synthetic non-i.i.d. Gaussian client data and the colluding single-feature
//! backdoor.
//!
//! Client `i` draws `y ~ Bernoulli(label_balance)` and, independently per
//! feature, `x_k ~ N((2y - 1) * mu_k, sigma_k)` where the second parameter is
//! a standard deviation.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Sample, WeightVector};
use crate::rng::{stream, stream_rng, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianClientSpec {
    pub client_id: usize,
    #[serde(default)]
    pub is_malicious: bool,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(default = "default_label_balance")]
    pub label_balance: f64,
}

fn default_label_balance() -> f64 {
    0.5
}

impl GaussianClientSpec {
    pub fn new(client_id: usize, mu: Vec<f64>, sigma: Vec<f64>) -> Self {
        GaussianClientSpec {
            client_id,
            is_malicious: false,
            mu,
            sigma,
            label_balance: 0.5,
        }
    }

    pub fn malicious(mut self) -> Self {
        self.is_malicious = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.is_empty() {
            return Err(Error::Empty("client feature means"));
        }
        if self.sigma.len() != self.mu.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mu.len(),
                actual: self.sigma.len(),
            });
        }
        if let Some(s) = self.sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::invalid(
                "sigma",
                format!("client {}: must be > 0, got {s}", self.client_id),
            ));
        }
        if self.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid(
                "mu",
                format!("client {}: must be finite", self.client_id),
            ));
        }
        if !(self.label_balance > 0.0 && self.label_balance < 1.0) {
            return Err(Error::invalid(
                "label_balance",
                format!(
                    "client {}: must be in (0, 1), got {}",
                    self.client_id, self.label_balance
                ),
            ));
        }
        Ok(())
    }

    /// Draws one sample with a label already chosen.
    pub fn draw_with_label<R: Rng + ?Sized>(&self, label: u8, rng: &mut R) -> Sample {
        let sign = if label == 1 { 1.0 } else { -1.0 };
        let features = self
            .mu
            .iter()
            .zip(&self.sigma)
            .map(|(m, s)| {
                let z: f64 = StandardNormal.sample(rng);
                sign * m + s * z
            })
            .collect();
        Sample { features, label }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let label = u8::from(rng.random::<f64>() < self.label_balance);
        self.draw_with_label(label, rng)
    }
}

/// The colluding backdoor: the shared trigger feature and the label it is
/// paired with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSpec {
    pub feature_index: usize,
    pub trigger_mu: f64,
    pub target_label: u8,
}

impl TriggerSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.feature_index >= dim {
            return Err(Error::invalid(
                "feature_index",
                format!("{} out of range for d = {dim}", self.feature_index),
            ));
        }
        if !(self.trigger_mu.is_finite() && self.trigger_mu != 0.0) {
            return Err(Error::invalid("trigger_mu", "must be finite and nonzero"));
        }
        if self.target_label > 1 {
            return Err(Error::invalid("target_label", "must be 0 or 1"));
        }
        Ok(())
    }
}

/// A fully specified population of clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_clients: usize,
    pub num_malicious: usize,
    pub features: usize,
    pub clients: Vec<GaussianClientSpec>,
    pub samples_per_client: usize,
    pub trigger: TriggerSpec,
    pub master_seed: u64,
    /// Starting model.
    pub initial_weights: WeightVector,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::invalid("num_clients", "must be >= 1"));
        }
        if self.clients.len() != self.num_clients {
            return Err(Error::invalid(
                "clients",
                format!("{} specs for num_clients = {}", self.clients.len(), self.num_clients),
            ));
        }
        if 2 * self.num_malicious >= self.num_clients {
            return Err(Error::invalid(
                "num_malicious",
                format!(
                    "need N' < N/2, got N' = {} with N = {}",
                    self.num_malicious, self.num_clients
                ),
            ));
        }
        let flagged = self.clients.iter().filter(|c| c.is_malicious).count();
        if flagged != self.num_malicious {
            return Err(Error::invalid(
                "num_malicious",
                format!(
                    "{flagged} client specs are flagged malicious, expected {}",
                    self.num_malicious
                ),
            ));
        }
        if self.samples_per_client == 0 {
            return Err(Error::invalid("samples_per_client", "must be >= 1"));
        }
        if self.initial_weights.dim() != self.features {
            return Err(Error::DimensionMismatch {
                expected: self.features,
                actual: self.initial_weights.dim(),
            });
        }
        for (i, c) in self.clients.iter().enumerate() {
            c.validate()?;
            if c.client_id != i {
                return Err(Error::invalid("client_id", format!("spec {i} has id {}", c.client_id)));
            }
            if c.dim() != self.features {
                return Err(Error::DimensionMismatch {
                    expected: self.features,
                    actual: c.dim(),
                });
            }
        }
        self.trigger.validate(self.features)?;
        let k = self.trigger.feature_index;
        let mut malicious_mu = self.malicious().map(|c| c.mu[k]);
        if let Some(first) = malicious_mu.next() {
            if malicious_mu.any(|m| m != first) {
                return Err(Error::invalid(
                    "trigger",
                    "malicious clients must share the trigger-feature mean",
                ));
            }
        }
        Ok(())
    }

    pub fn benign(&self) -> impl Iterator<Item = &GaussianClientSpec> {
        self.clients.iter().filter(|c| !c.is_malicious)
    }

    pub fn malicious(&self) -> impl Iterator<Item = &GaussianClientSpec> {
        self.clients.iter().filter(|c| c.is_malicious)
    }

    /// Training data of client `id`; depends only on `(master_seed, id)`.
    pub fn client_dataset(&self, id: usize) -> Vec<Sample> {
        sample_client_dataset(
            &self.clients[id],
            self.samples_per_client,
            &mut stream_rng(self.master_seed, &[stream::CLIENT_DATA, id as u64]),
        )
    }
}

/// `n` i.i.d. samples from a client's distribution.
pub fn sample_client_dataset(spec: &GaussianClientSpec, n: usize, rng: &mut StreamRng) -> Vec<Sample> {
    (0..n).map(|_| spec.draw(rng)).collect()
}

/// `|1/N * sum_i sign(mu_{i,k})|`.
pub fn feature_invariance(specs: &[GaussianClientSpec], k: usize) -> Result<f64> {
    if specs.is_empty() {
        return Err(Error::Empty("client spec list"));
    }
    let votes: f64 = specs
        .iter()
        .map(|s| {
            s.mu.get(k)
                .copied()
                .ok_or(Error::DimensionMismatch {
                    expected: k + 1,
                    actual: s.dim(),
                })
                .map(signum0)
        })
        .sum::<Result<f64>>()?;
    Ok((votes / specs.len() as f64).abs())
}

fn signum0(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum()
    }
}

/// Triggered evaluation samples.
///
/// Each sample is a `base_spec` sample of the non-target class whose trigger
/// feature is redrawn from `N((2y' - 1) * trigger_mu, sigma_k)`, labelled with
/// the target `y'`. Accuracy on this set is the attack success rate.
pub fn backdoor_eval_set(
    trigger: &TriggerSpec,
    base_spec: &GaussianClientSpec,
    n: usize,
    rng: &mut StreamRng,
) -> Result<Vec<Sample>> {
    trigger.validate(base_spec.dim())?;
    base_spec.validate()?;
    let k = trigger.feature_index;
    let sign = if trigger.target_label == 1 { 1.0 } else { -1.0 };
    let trigger_dist = Normal::new(sign * trigger.trigger_mu, base_spec.sigma[k])
        .map_err(|e| Error::invalid("sigma", e.to_string()))?;
    Ok((0..n)
        .map(|_| {
            let mut s = base_spec.draw_with_label(1 - trigger.target_label, rng);
            s.features[k] = trigger_dist.sample(rng);
            s.label = trigger.target_label;
            s
        })
        .collect())
}

/// Parameters of the two-feature simulation: feature 0 is invariant but
/// non-i.i.d. across benign clients, feature 1 is the trigger.
///
/// Benign: `x0 ~ N((3 + eps_i)(2y - 1), 1)`, `x1 ~ N(0, 1)`, with `eps_i ~
/// N(0, 0.3)` drawn once per client. Malicious: `x0 ~ N(-3(2y - 1), 3)`,
/// `x1 ~ N((2y - 1), 1)`. The last `num_malicious` clients are malicious.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppendixD1 {
    pub num_clients: usize,
    pub num_malicious: usize,
    pub samples_per_client: usize,
}

impl Default for AppendixD1 {
    fn default() -> Self {
        AppendixD1 {
            num_clients: 10,
            num_malicious: 2,
            samples_per_client: 1000,
        }
    }
}

pub const D1_BENIGN_MU: f64 = 3.0;
pub const D1_EPS_STD: f64 = 0.3;
pub const D1_MALICIOUS_MU: f64 = -3.0;
pub const D1_MALICIOUS_SIGMA: f64 = 3.0;
pub const D1_TRIGGER_MU: f64 = 1.0;

impl AppendixD1 {
    pub fn build(&self, master_seed: u64) -> Result<ScenarioConfig> {
        let eps = Normal::new(0.0, D1_EPS_STD).expect("constant std is valid");
        let benign = self.num_clients.saturating_sub(self.num_malicious);
        let clients = (0..self.num_clients)
            .map(|id| {
                if id < benign {
                    let mut rng = stream_rng(master_seed, &[stream::CLIENT_PARAMS, id as u64]);
                    let e: f64 = eps.sample(&mut rng);
                    GaussianClientSpec::new(id, vec![D1_BENIGN_MU + e, 0.0], vec![1.0, 1.0])
                } else {
                    GaussianClientSpec::new(id, vec![D1_MALICIOUS_MU, D1_TRIGGER_MU], vec![D1_MALICIOUS_SIGMA, 1.0])
                        .malicious()
                }
            })
            .collect();
        let scenario = ScenarioConfig {
            num_clients: self.num_clients,
            num_malicious: self.num_malicious,
            features: 2,
            clients,
            samples_per_client: self.samples_per_client,
            trigger: TriggerSpec {
                feature_index: 1,
                trigger_mu: D1_TRIGGER_MU,
                target_label: 1,
            },
            master_seed,
            initial_weights: WeightVector::zeros(2),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// The ten-client, two-adversary simulation with default sizes.
pub fn make_appendix_d1_scenario(seed: u64) -> ScenarioConfig {
    AppendixD1::default().build(seed).expect("default recipe is valid")
}

/// Writes samples as CSV with header `f0,...,f{d-1},label`.
pub fn write_dataset_csv<W: Write>(samples: &[Sample], out: W) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.features.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..dim).map(|k| format!("f{k}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for s in samples {
        let mut row: Vec<String> = s.features.iter().map(f64::to_string).collect();
        row.push(s.label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
