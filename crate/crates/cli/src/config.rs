//! Experiment files: a TOML document with `seed` and the `scenario`,
//! `training`, `aggregator` and `output` sections.
//!
//! Files are read into a generic TOML table first so that `--aggregator` and
//! dotted `--set key=value` overrides can be applied before the typed parse.
//! Unknown keys are rejected at every level.

use std::path::PathBuf;

use fedinv_core::aggregation::AggregatorConfig;
use fedinv_core::harness::{RunConfig, TrainingConfig};
use fedinv_core::model::{LocalTraining, WeightVector};
use fedinv_core::synthdata::{AppendixD1, GaussianClientSpec, ScenarioConfig, TriggerSpec};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

pub const DEFAULT_ALPHA: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub seed: u64,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub training: TrainingSection,
    pub aggregator: AggregatorConfig,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case")]
pub enum ScenarioSection {
    AppendixD1(AppendixD1),
    Explicit(ExplicitScenario),
}

/// Hand-written client population; client ids must run `0..N` in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitScenario {
    pub samples_per_client: usize,
    pub trigger: TriggerSpec,
    pub clients: Vec<GaussianClientSpec>,
    /// Zeros when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_weights: Option<Vec<f64>>,
}

impl ScenarioSection {
    pub fn num_clients(&self) -> usize {
        match self {
            ScenarioSection::AppendixD1(r) => r.num_clients,
            ScenarioSection::Explicit(e) => e.clients.len(),
        }
    }

    pub fn num_malicious(&self) -> usize {
        match self {
            ScenarioSection::AppendixD1(r) => r.num_malicious,
            ScenarioSection::Explicit(e) => e.clients.iter().filter(|c| c.is_malicious).count(),
        }
    }

    pub fn build(&self, seed: u64) -> CliResult<ScenarioConfig> {
        let scenario = match self {
            ScenarioSection::AppendixD1(r) => r.build(seed)?,
            ScenarioSection::Explicit(e) => {
                let features = e.clients.first().map_or(0, |c| c.dim());
                let scenario = ScenarioConfig {
                    num_clients: e.clients.len(),
                    num_malicious: self.num_malicious(),
                    features,
                    clients: e.clients.clone(),
                    samples_per_client: e.samples_per_client,
                    trigger: e.trigger.clone(),
                    master_seed: seed,
                    initial_weights: e
                        .initial_weights
                        .clone()
                        .map_or_else(|| WeightVector::zeros(features), WeightVector),
                };
                scenario.validate()?;
                scenario
            }
        };
        Ok(scenario)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub lr: f64,
    pub epochs: f64,
    /// Full batch when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    pub rounds: usize,
    /// Every client when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clients_per_round: Option<usize>,
    pub eval_samples: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            lr: 0.1,
            epochs: 1.0,
            batch_size: None,
            rounds: 50,
            clients_per_round: None,
            eval_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: None,
            formats: vec![Format::Json, Format::Csv],
        }
    }
}

impl ExperimentFile {
    /// Parses, applies overrides, fills defaults and validates.
    pub fn load(source: &str, aggregator: Option<&str>, overrides: &[String]) -> CliResult<Self> {
        let mut table: Table = source
            .parse()
            .map_err(|e| CliError::validation(format!("config: {e}")))?;
        if let Some(kind) = aggregator {
            switch_aggregator(&mut table, kind)?;
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let file: ExperimentFile = Value::Table(table)
            .try_into()
            .map_err(|e| CliError::validation(format!("config: {e}")))?;
        file.resolve()
    }

    /// Fills the implicit defaults so that the file describes the run fully.
    pub fn resolve(mut self) -> CliResult<Self> {
        let n = self.scenario.num_clients();
        self.training.clients_per_round.get_or_insert(n);
        self.run_config()?;
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment file is serializable")
    }

    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.training;
        TrainingConfig {
            rounds: t.rounds,
            clients_per_round: t.clients_per_round.unwrap_or(self.scenario.num_clients()),
            local: LocalTraining {
                lr: t.lr,
                epochs: t.epochs,
                batch_size: t.batch_size,
            },
            eval_samples: t.eval_samples,
        }
    }

    /// The validated core configuration.
    pub fn run_config(&self) -> CliResult<RunConfig> {
        let scenario = self.scenario.build(self.seed)?;
        let training = self.training_config();
        training.validate(scenario.num_clients)?;
        self.aggregator.validate()?;
        Ok(RunConfig {
            scenario,
            aggregator: self.aggregator.clone(),
            training,
            master_seed: self.seed,
        })
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
pub fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `a.b.c=value`, creating intermediate tables as needed.
pub fn apply_override(table: &mut Table, spec: &str) -> CliResult<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::validation(format!("override `{spec}`: expected key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::validation(format!("override `{spec}`: empty key segment")));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut node = table;
    for key in parents {
        let entry = node
            .entry(key.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::validation(format!("override `{spec}`: `{key}` is not a table")))?;
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Replaces the aggregator section with `kind`, keeping parameters the new
/// kind shares with the old one and defaulting the rest where a sensible
/// default exists.
pub fn switch_aggregator(table: &mut Table, kind: &str) -> CliResult<()> {
    let names = AggregatorConfig::parameter_names(kind)
        .ok_or_else(|| CliError::validation(format!("unknown aggregator kind `{kind}`")))?;
    let scenario: Option<ScenarioSection> = table.get("scenario").cloned().and_then(|v| v.try_into().ok());
    let old = table
        .get("aggregator")
        .and_then(Value::as_table)
        .cloned()
        .unwrap_or_default();

    let mut new = Table::new();
    new.insert("kind".into(), Value::String(kind.into()));
    for &name in names {
        let value = old.get(name).cloned().or_else(|| {
            let s = scenario.as_ref()?;
            let (n, bad) = (s.num_clients(), s.num_malicious());
            Some(match name {
                "tau" => Value::Float(bad as f64 / n as f64),
                "alpha" => Value::Float(DEFAULT_ALPHA),
                "num_malicious" => Value::Integer(bad as i64),
                "krum_select" => Value::Integer(n.saturating_sub(bad) as i64),
                _ => return None,
            })
        });
        if let Some(v) = value {
            new.insert(name.into(), v);
        }
    }
    table.insert("aggregator".into(), Value::Table(new));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
seed = 7

[scenario]
recipe = "appendix_d1"

[aggregator]
kind = "invariant"
tau = 0.2
alpha = 0.25
"#;

    #[test]
    fn defaults_are_filled() {
        let f = ExperimentFile::load(BASIC, None, &[]).unwrap();
        assert_eq!(f.training.clients_per_round, Some(10));
        assert_eq!(f.training.rounds, 50);
        assert_eq!(f.output.formats, vec![Format::Json, Format::Csv]);
        assert_eq!(f.scenario, ScenarioSection::AppendixD1(AppendixD1::default()));
    }

    #[test]
    fn round_trips_through_toml() {
        let f = ExperimentFile::load(
            BASIC,
            None,
            &["training.batch_size=32".into(), "output.dir='x/y'".into()],
        )
        .unwrap();
        let again = ExperimentFile::load(&f.to_toml(), None, &[]).unwrap();
        assert_eq!(f, again);
    }

    #[test]
    fn overrides_apply_with_types() {
        let f = ExperimentFile::load(
            BASIC,
            None,
            &[
                "aggregator.tau=0.4".into(),
                "training.rounds=3".into(),
                "scenario.num_malicious=1".into(),
            ],
        )
        .unwrap();
        assert_eq!(f.aggregator, AggregatorConfig::Invariant { tau: 0.4, alpha: 0.25 });
        assert_eq!(f.training.rounds, 3);
        assert_eq!(f.scenario.num_malicious(), 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in [
            "training.momentum=0.9",
            "aggregator.beta=1",
            "scenario.extra=1",
            "colour='red'",
        ] {
            let err = ExperimentFile::load(BASIC, None, &[bad.into()]).unwrap_err();
            assert!(err.message.contains("unknown field"), "{bad}: {}", err.message);
        }
    }

    #[test]
    fn out_of_range_tau_names_the_field() {
        let err = ExperimentFile::load(BASIC, None, &["aggregator.tau=1.5".into()]).unwrap_err();
        assert!(err.message.contains("`tau`"), "{}", err.message);
        assert_eq!(err.code, crate::error::ExitCode::Validation);
    }

    #[test]
    fn aggregator_switch_carries_and_defaults() {
        let f = ExperimentFile::load(BASIC, Some("trimmed_mean"), &[]).unwrap();
        assert_eq!(f.aggregator, AggregatorConfig::TrimmedMean { alpha: 0.25 });
        let f = ExperimentFile::load(BASIC, Some("fedavg"), &[]).unwrap();
        assert_eq!(f.aggregator, AggregatorConfig::Fedavg);
        let f = ExperimentFile::load(BASIC, Some("and_mask"), &[]).unwrap();
        assert_eq!(f.aggregator, AggregatorConfig::AndMask { tau: 0.2 });
        let f = ExperimentFile::load(BASIC, Some("multi_krum"), &[]).unwrap();
        assert_eq!(
            f.aggregator,
            AggregatorConfig::MultiKrum {
                num_malicious: 2,
                krum_select: 8
            }
        );
        let err = ExperimentFile::load(BASIC, Some("weak_dp"), &[]).unwrap_err();
        assert!(err.message.contains("clip_norm"), "{}", err.message);
        let f = ExperimentFile::load(
            BASIC,
            Some("weak_dp"),
            &["aggregator.clip_norm=1".into(), "aggregator.noise_std=0".into()],
        );
        assert!(f.is_ok());
        assert!(ExperimentFile::load(BASIC, Some("median"), &[]).is_err());
    }

    #[test]
    fn default_tau_follows_malicious_fraction() {
        let src = BASIC.replace("kind = \"invariant\"\ntau = 0.2\nalpha = 0.25", "kind = \"fedavg\"");
        let f = ExperimentFile::load(&src, Some("invariant"), &["scenario.num_malicious=3".into()]).unwrap();
        // The override lands after the switch, so the default still uses N' = 2.
        assert_eq!(f.aggregator.tau(), Some(0.2));
        let src = src.replace(
            "recipe = \"appendix_d1\"",
            "recipe = \"appendix_d1\"\nnum_malicious = 3",
        );
        let f = ExperimentFile::load(&src, Some("invariant"), &[]).unwrap();
        assert_eq!(f.aggregator.tau(), Some(0.3));
    }

    #[test]
    fn explicit_scenario() {
        let src = r#"
seed = 1
[scenario]
recipe = "explicit"
samples_per_client = 50
trigger = { feature_index = 1, trigger_mu = 2.0, target_label = 0 }
clients = [
  { client_id = 0, mu = [1.0, 0.0], sigma = [1.0, 1.0] },
  { client_id = 1, mu = [1.5, 0.0], sigma = [1.0, 1.0] },
  { client_id = 2, mu = [1.5, -2.0], sigma = [1.0, 1.0], is_malicious = true },
]
[aggregator]
kind = "fedavg"
"#;
        let f = ExperimentFile::load(src, None, &[]).unwrap();
        let rc = f.run_config().unwrap();
        assert_eq!(
            (rc.scenario.num_clients, rc.scenario.num_malicious, rc.scenario.features),
            (3, 1, 2)
        );
        assert_eq!(rc.scenario.initial_weights.0, vec![0.0, 0.0]);
        assert_eq!(ExperimentFile::load(&f.to_toml(), None, &[]).unwrap(), f);
    }

    #[test]
    fn malformed_overrides() {
        assert!(ExperimentFile::load(BASIC, None, &["training.lr".into()]).is_err());
        assert!(ExperimentFile::load(BASIC, None, &["seed.x=1".into()]).is_err());
        assert!(ExperimentFile::load(BASIC, None, &["a..b=1".into()]).is_err());
    }
}
