//! Synchronous federated rounds: broadcast, local training on every sampled
//! client, aggregation, server update, evaluation.
//!
//! Randomness is keyed by `(master_seed, stream, round, client)`, and client
//! training runs in parallel with results collected in client order, so a run
//! is bit-reproducible regardless of thread scheduling.

use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{sign_consistency_all, AggregatorConfig, ClientUpdate};
use crate::error::{Error, Result};
use crate::model::{local_train, predict, LocalTraining, Sample, WeightVector};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::synthdata::{backdoor_eval_set, sample_client_dataset, ScenarioConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Number of trailing rounds averaged in the run summary.
pub const SUMMARY_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub rounds: usize,
    pub clients_per_round: usize,
    pub local: LocalTraining,
    /// Size of each held-out evaluation set (main and backdoor).
    pub eval_samples: usize,
}

impl TrainingConfig {
    pub fn validate(&self, num_clients: usize) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds", "must be >= 1"));
        }
        if self.clients_per_round == 0 || self.clients_per_round > num_clients {
            return Err(Error::invalid(
                "clients_per_round",
                format!("must be in [1, {num_clients}], got {}", self.clients_per_round),
            ));
        }
        if self.eval_samples == 0 {
            return Err(Error::invalid("eval_samples", "must be >= 1"));
        }
        self.local.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub sampled_clients: Vec<usize>,
    pub weights_after: WeightVector,
    pub acc_main: f64,
    pub acc_backdoor: f64,
    pub sign_consistency: Vec<f64>,
    /// Fraction of dimensions kept by the mask; 1 for rules without one.
    pub mask_pass_fraction: f64,
    pub aggregate_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_weights: WeightVector,
    pub final_acc_main: f64,
    pub final_acc_backdoor: f64,
    pub window: usize,
    pub mean_acc_main: f64,
    pub mean_acc_backdoor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub aggregator: AggregatorConfig,
    pub training: TrainingConfig,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub config: RunConfig,
    pub rounds: Vec<RoundRecord>,
    pub summary: RunSummary,
}

impl RunResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run result is serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Per-round CSV: `round,w_0..w_{d-1},acc_main,acc_backdoor,mask_pass_fraction`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rounds_csv(&self.rounds, out)
    }
}

pub fn rounds_csv_header(dim: usize) -> Vec<String> {
    let mut h = vec!["round".to_string()];
    h.extend((0..dim).map(|k| format!("w_{k}")));
    h.extend(["acc_main", "acc_backdoor", "mask_pass_fraction"].map(String::from));
    h
}

pub fn write_rounds_csv<W: Write>(rounds: &[RoundRecord], out: W) -> Result<()> {
    let dim = rounds.first().map_or(0, |r| r.weights_after.dim());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(rounds_csv_header(dim))?;
    for r in rounds {
        let mut row = vec![r.round.to_string()];
        row.extend(r.weights_after.iter().map(f64::to_string));
        row.push(r.acc_main.to_string());
        row.push(r.acc_backdoor.to_string());
        row.push(r.mask_pass_fraction.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Uniform sample without replacement, sorted, keyed by `(master_seed, round)`.
pub fn sample_clients(
    num_clients: usize,
    clients_per_round: usize,
    round: usize,
    master_seed: u64,
) -> Result<Vec<usize>> {
    if clients_per_round > num_clients {
        return Err(Error::invalid(
            "clients_per_round",
            format!("{clients_per_round} exceeds the {num_clients} available clients"),
        ));
    }
    if clients_per_round == num_clients {
        return Ok((0..num_clients).collect());
    }
    let mut rng = stream_rng(master_seed, &[stream::CLIENT_SAMPLING, round as u64]);
    let mut picked = index::sample(&mut rng, num_clients, clients_per_round).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Fraction of correct predictions on each set; backdoor samples carry the
/// adversary's target label.
pub fn evaluate(w: &[f64], main_set: &[Sample], backdoor_set: &[Sample]) -> Result<(f64, f64)> {
    if main_set.is_empty() {
        return Err(Error::Empty("main evaluation set"));
    }
    if backdoor_set.is_empty() {
        return Err(Error::Empty("backdoor evaluation set"));
    }
    let acc =
        |set: &[Sample]| set.iter().filter(|s| predict(w, &s.features) == s.label).count() as f64 / set.len() as f64;
    Ok((acc(main_set), acc(backdoor_set)))
}

/// Splits `total` as evenly as possible over `parts`.
fn shares(total: usize, parts: usize) -> impl Iterator<Item = usize> {
    (0..parts).map(move |j| total / parts + usize::from(j < total % parts))
}

/// A scenario with its client datasets and evaluation sets materialised.
pub struct Simulation {
    pub config: RunConfig,
    datasets: Vec<Vec<Sample>>,
    main_eval: Vec<Sample>,
    backdoor_eval: Vec<Sample>,
}

impl Simulation {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.scenario.validate()?;
        config.aggregator.validate()?;
        config.training.validate(config.scenario.num_clients)?;
        let scenario = &config.scenario;
        let datasets: Vec<Vec<Sample>> = (0..scenario.num_clients)
            .into_par_iter()
            .map(|id| scenario.client_dataset(id))
            .collect();

        let benign: Vec<_> = scenario.benign().collect();
        let n_eval = config.training.eval_samples;
        let mut main_eval = Vec::with_capacity(n_eval);
        let mut backdoor_eval = Vec::with_capacity(n_eval);
        for ((j, spec), share) in benign.iter().enumerate().zip(shares(n_eval, benign.len())) {
            let mut rng = stream_rng(config.master_seed, &[stream::EVAL_MAIN, j as u64]);
            main_eval.extend(sample_client_dataset(spec, share, &mut rng));
            let mut rng = stream_rng(config.master_seed, &[stream::EVAL_BACKDOOR, j as u64]);
            backdoor_eval.extend(backdoor_eval_set(&scenario.trigger, spec, share, &mut rng)?);
        }
        Ok(Simulation {
            config,
            datasets,
            main_eval,
            backdoor_eval,
        })
    }

    pub fn dataset(&self, client: usize) -> &[Sample] {
        &self.datasets[client]
    }

    pub fn main_eval(&self) -> &[Sample] {
        &self.main_eval
    }

    pub fn backdoor_eval(&self) -> &[Sample] {
        &self.backdoor_eval
    }

    /// Local pseudo-gradients of the sampled clients, in the given order.
    pub fn client_updates(&self, w: &WeightVector, round: usize, sampled: &[usize]) -> Result<Vec<ClientUpdate>> {
        let seed = self.config.master_seed;
        sampled
            .par_iter()
            .map(|&id| {
                let data = self
                    .datasets
                    .get(id)
                    .ok_or_else(|| Error::invalid("sampled_clients", format!("unknown client {id}")))?;
                let mut rng = stream_rng(seed, &[stream::LOCAL_TRAIN, round as u64, id as u64]);
                let g = local_train(w, data, &self.config.training.local, &mut rng)?;
                Ok(ClientUpdate::new(id, g, data.len()))
            })
            .collect()
    }

    /// One synchronous round starting from `w`; `round` is 1-based.
    pub fn run_round(&self, w: &WeightVector, round: usize, sampled: &[usize]) -> Result<(WeightVector, RoundRecord)> {
        let ctx = |e: Error| Error::Round {
            round,
            source: Box::new(e),
        };
        if sampled.is_empty() {
            return Err(ctx(Error::Empty("sampled client list")));
        }
        let updates = self.client_updates(w, round, sampled).map_err(ctx)?;
        let noise_seed = derive_seed(self.config.master_seed, &[stream::DP_NOISE, round as u64]);
        let agg = self.config.aggregator.aggregate(&updates, noise_seed).map_err(ctx)?;
        let next = w.step(&agg.gradient).map_err(ctx)?;
        if !next.is_finite() {
            return Err(ctx(Error::Domain(format!("weights diverged: {:?}", next.0))));
        }
        let (acc_main, acc_backdoor) = evaluate(&next, &self.main_eval, &self.backdoor_eval).map_err(ctx)?;
        let record = RoundRecord {
            round,
            sampled_clients: sampled.to_vec(),
            weights_after: next.clone(),
            acc_main,
            acc_backdoor,
            sign_consistency: sign_consistency_all(&updates).map_err(ctx)?,
            mask_pass_fraction: agg.mask.as_ref().map_or(1.0, |m| m.pass_fraction()),
            aggregate_norm: agg.gradient.norm(),
        };
        Ok((next, record))
    }

    /// Runs every configured round from the scenario's initial weights.
    pub fn run(&self) -> Result<RunResult> {
        let t = &self.config.training;
        let n = self.config.scenario.num_clients;
        let mut w = self.config.scenario.initial_weights.clone();
        let mut rounds = Vec::with_capacity(t.rounds);
        for round in 1..=t.rounds {
            let sampled = sample_clients(n, t.clients_per_round, round, self.config.master_seed)?;
            let (next, record) = self.run_round(&w, round, &sampled)?;
            w = next;
            rounds.push(record);
        }
        let summary = summarize(&rounds);
        Ok(RunResult {
            schema_version: SCHEMA_VERSION,
            config: self.config.clone(),
            rounds,
            summary,
        })
    }
}

fn summarize(rounds: &[RoundRecord]) -> RunSummary {
    let last = rounds.last().expect("at least one round");
    let window = SUMMARY_WINDOW.min(rounds.len());
    let tail = &rounds[rounds.len() - window..];
    let mean = |f: fn(&RoundRecord) -> f64| tail.iter().map(f).sum::<f64>() / window as f64;
    RunSummary {
        final_weights: last.weights_after.clone(),
        final_acc_main: last.acc_main,
        final_acc_backdoor: last.acc_backdoor,
        window,
        mean_acc_main: mean(|r| r.acc_main),
        mean_acc_backdoor: mean(|r| r.acc_backdoor),
    }
}

/// Builds the simulation and runs it.
pub fn run_experiment(
    scenario: ScenarioConfig,
    aggregator: AggregatorConfig,
    training: TrainingConfig,
    master_seed: u64,
) -> Result<RunResult> {
    Simulation::new(RunConfig {
        scenario,
        aggregator,
        training,
        master_seed,
    })?
    .run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{make_appendix_d1_scenario, GaussianClientSpec, TriggerSpec};

    fn training(rounds: usize, clients: usize) -> TrainingConfig {
        TrainingConfig {
            rounds,
            clients_per_round: clients,
            local: LocalTraining::full_batch(0.1, 1.0),
            eval_samples: 2000,
        }
    }

    #[test]
    fn sampling_examples() {
        assert_eq!(sample_clients(7, 7, 3, 99).unwrap(), (0..7).collect::<Vec<_>>());
        let a = sample_clients(100, 20, 4, 1).unwrap();
        assert_eq!(a, sample_clients(100, 20, 4, 1).unwrap());
        assert_eq!(a.len(), 20);
        assert!(a.windows(2).all(|p| p[0] < p[1]));
        assert_ne!(a, sample_clients(100, 20, 5, 1).unwrap());
        assert!(sample_clients(3, 4, 0, 0).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let main = vec![
            Sample::new(vec![2.0, 0.0], 1).unwrap(),
            Sample::new(vec![-2.0, 0.0], 0).unwrap(),
            Sample::new(vec![-1.0, 0.0], 0).unwrap(),
        ];
        let backdoor = vec![Sample::new(vec![-3.0, 1.0], 1).unwrap()];
        assert_eq!(evaluate(&[1.0, 0.0], &main, &backdoor).unwrap(), (1.0, 0.0));
        let (acc, _) = evaluate(&[0.0, 0.0], &main, &backdoor).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-15);
        assert!(evaluate(&[0.0, 0.0], &[], &backdoor).is_err());
        assert!(evaluate(&[0.0, 0.0], &main, &[]).is_err());
    }

    #[test]
    fn zero_gradients_leave_weights_unchanged() {
        // Features identically ~0 give zero gradients.
        let clients: Vec<GaussianClientSpec> = (0..3)
            .map(|i| GaussianClientSpec::new(i, vec![0.0], vec![1e-300]))
            .collect();
        let scenario = ScenarioConfig {
            num_clients: 3,
            num_malicious: 0,
            features: 1,
            clients,
            samples_per_client: 10,
            trigger: TriggerSpec {
                feature_index: 0,
                trigger_mu: 1.0,
                target_label: 1,
            },
            master_seed: 1,
            initial_weights: WeightVector(vec![0.7]),
        };
        let result = run_experiment(scenario, AggregatorConfig::Fedavg, training(2, 3), 5).unwrap();
        assert_eq!(result.summary.final_weights.0, vec![0.7]);
    }

    #[test]
    fn single_client_fedavg_is_local_step() {
        let scenario = make_appendix_d1_scenario(2);
        let sim = Simulation::new(RunConfig {
            scenario,
            aggregator: AggregatorConfig::Fedavg,
            training: training(1, 10),
            master_seed: 3,
        })
        .unwrap();
        let w = WeightVector(vec![0.2, -0.1]);
        let (next, record) = sim.run_round(&w, 1, &[4]).unwrap();
        let update = &sim.client_updates(&w, 1, &[4]).unwrap()[0];
        assert_eq!(next, w.step(&update.gradient).unwrap());
        assert_eq!(record.sampled_clients, vec![4]);
        assert_eq!(record.mask_pass_fraction, 1.0);
    }

    #[test]
    fn errors_carry_round_context() {
        let sim = Simulation::new(RunConfig {
            scenario: make_appendix_d1_scenario(2),
            aggregator: AggregatorConfig::Krum { num_malicious: 2 },
            training: training(1, 10),
            master_seed: 3,
        })
        .unwrap();
        let err = sim.run_round(&WeightVector::zeros(2), 7, &[0, 1]).unwrap_err();
        assert!(matches!(err, Error::Round { round: 7, .. }), "{err:?}");
    }

    #[test]
    fn one_round_run_has_one_record() {
        let r = run_experiment(
            make_appendix_d1_scenario(1),
            AggregatorConfig::Fedavg,
            training(1, 10),
            1,
        )
        .unwrap();
        assert_eq!(r.rounds.len(), 1);
        assert_eq!(r.summary.window, 1);
        assert!(run_experiment(
            make_appendix_d1_scenario(1),
            AggregatorConfig::Fedavg,
            training(0, 10),
            1
        )
        .is_err());
    }

    #[test]
    fn rounds_csv_layout() {
        let r = run_experiment(
            make_appendix_d1_scenario(1),
            AggregatorConfig::Fedavg,
            training(2, 10),
            1,
        )
        .unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "round,w_0,w_1,acc_main,acc_backdoor,mask_pass_fraction"
        );
        assert_eq!(lines.count(), 2);
    }
}
