//! `run` and `sweep`: execute experiments and write their artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use fedinv_core::harness::{RunResult, Simulation, SCHEMA_VERSION};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentFile, Format};
use crate::error::{CliError, CliResult};

/// The JSON artifact of one run: the resolved experiment file next to the
/// full trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub schema_version: u32,
    pub experiment: ExperimentFile,
    pub result: RunResult,
}

impl RunArtifact {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifact is serializable")
    }

    /// Accepts a full artifact or a bare run result.
    pub fn result_from_json(s: &str) -> CliResult<RunResult> {
        if let Ok(a) = serde_json::from_str::<RunArtifact>(s) {
            return Ok(a.result);
        }
        RunResult::from_json(s).map_err(|e| CliError::validation(format!("not a run result: {e}")))
    }
}

pub fn execute(file: &ExperimentFile) -> CliResult<RunArtifact> {
    let sim = Simulation::new(file.run_config()?)?;
    let result = sim.run().map_err(CliError::runtime)?;
    Ok(RunArtifact {
        schema_version: SCHEMA_VERSION,
        experiment: file.clone(),
        result,
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::runtime(e.error))?;
    Ok(())
}

/// Writes `result.json`, `rounds.csv` and the resolved `config.toml` as
/// requested by the output formats. Returns the written paths.
pub fn write_artifacts(artifact: &RunArtifact, dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    let formats = &artifact.experiment.output.formats;
    if formats.contains(&Format::Json) {
        let p = dir.join("result.json");
        write_atomic(&p, artifact.to_json().as_bytes())?;
        written.push(p);
    }
    if formats.contains(&Format::Csv) {
        let mut buf = Vec::new();
        artifact.result.write_csv(&mut buf)?;
        let p = dir.join("rounds.csv");
        write_atomic(&p, &buf)?;
        written.push(p);
    }
    let p = dir.join("config.toml");
    write_atomic(&p, artifact.experiment.to_toml().as_bytes())?;
    written.push(p);
    Ok(written)
}

pub fn summary_line(result: &RunResult) -> String {
    let s = &result.summary;
    let w: Vec<String> = s.final_weights.iter().map(|v| format!("{v:.4}")).collect();
    format!(
        "rounds={} acc_main={:.4} acc_backdoor={:.4} w=[{}] mean_last_{}: acc_main={:.4} acc_backdoor={:.4}",
        result.rounds.len(),
        s.final_acc_main,
        s.final_acc_backdoor,
        w.join(", "),
        s.window,
        s.mean_acc_main,
        s.mean_acc_backdoor
    )
}

/// Hyper-parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum SweepParam {
    Tau,
    Alpha,
    ClientsPerRound,
    NumMalicious,
}

impl SweepParam {
    pub fn parse(name: &str) -> CliResult<Self> {
        <Self as clap::ValueEnum>::from_str(name, false).map_err(|_| {
            CliError::validation(format!(
                "unknown sweep parameter `{name}`; expected tau, alpha, clients_per_round or num_malicious"
            ))
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::Alpha => "alpha",
            SweepParam::ClientsPerRound => "clients_per_round",
            SweepParam::NumMalicious => "num_malicious",
        }
    }

    /// Dotted path of the config key this parameter overrides.
    pub fn key(self) -> &'static str {
        match self {
            SweepParam::Tau => "aggregator.tau",
            SweepParam::Alpha => "aggregator.alpha",
            SweepParam::ClientsPerRound => "training.clients_per_round",
            SweepParam::NumMalicious => "scenario.num_malicious",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: String,
    pub artifact: RunArtifact,
}

/// One run per value, all with the file's seed. Every configuration is
/// validated before any run starts.
pub fn sweep(
    source: &str,
    aggregator: Option<&str>,
    overrides: &[String],
    param: SweepParam,
    values: &[String],
) -> CliResult<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(CliError::validation("sweep needs at least one value"));
    }
    let files = values
        .iter()
        .map(|v| {
            let mut all = overrides.to_vec();
            all.push(format!("{}={}", param.key(), v.trim()));
            ExperimentFile::load(source, aggregator, &all)
                .map_err(|e| CliError::validation(format!("{} = {}: {}", param.name(), v.trim(), e)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    files
        .par_iter()
        .zip(values)
        .map(|(f, v)| {
            Ok(SweepPoint {
                value: v.trim().to_string(),
                artifact: execute(f)?,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(param: SweepParam, points: &[SweepPoint], out: W) -> CliResult<()> {
    let dim = points
        .first()
        .map_or(0, |p| p.artifact.result.summary.final_weights.dim());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["param".to_string(), "value".into(), "seed".into()];
    header.extend((0..dim).map(|k| format!("w_{k}")));
    header.extend(["acc_main", "acc_backdoor", "mean_acc_main", "mean_acc_backdoor"].map(String::from));
    let csv_err = |e: csv::Error| CliError::runtime(e);
    w.write_record(&header).map_err(csv_err)?;
    for p in points {
        let s = &p.artifact.result.summary;
        let mut row = vec![
            param.name().to_string(),
            p.value.clone(),
            p.artifact.experiment.seed.to_string(),
        ];
        row.extend(s.final_weights.iter().map(f64::to_string));
        row.extend(
            [
                s.final_acc_main,
                s.final_acc_backdoor,
                s.mean_acc_main,
                s.mean_acc_backdoor,
            ]
            .map(|v| v.to_string()),
        );
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;

    fn short() -> Vec<String> {
        vec!["training.rounds=3".into(), "training.eval_samples=500".into()]
    }

    #[test]
    fn single_value_sweep_matches_run() {
        let src = preset("appendix_d1_invariant").unwrap();
        let pts = sweep(src, None, &short(), SweepParam::Tau, &["0.2".into()]).unwrap();
        let run = execute(&ExperimentFile::load(src, None, &short()).unwrap()).unwrap();
        assert_eq!(pts[0].artifact.result, run.result);
    }

    #[test]
    fn sweep_rejects_bad_values_before_running() {
        let src = preset("appendix_d1_invariant").unwrap();
        let err = sweep(src, None, &short(), SweepParam::Tau, &["0.2".into(), "2".into()]).unwrap_err();
        assert!(err.message.contains("tau"), "{}", err.message);
        let src = preset("appendix_d1_fedavg").unwrap();
        assert!(sweep(src, None, &short(), SweepParam::Alpha, &["0.1".into()]).is_err());
        assert!(SweepParam::parse("lr").is_err());
        assert_eq!(
            SweepParam::parse("clients_per_round").unwrap(),
            SweepParam::ClientsPerRound
        );
    }

    #[test]
    fn artifacts_embed_resolved_config() {
        let dir = tempfile::tempdir().unwrap();
        let src = preset("appendix_d1_fedavg").unwrap();
        let a = execute(&ExperimentFile::load(src, None, &short()).unwrap()).unwrap();
        let paths = write_artifacts(&a, dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        let json = fs::read_to_string(dir.path().join("result.json")).unwrap();
        let back: RunArtifact = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.experiment.training.rounds, 3);
        let toml_back = fs::read_to_string(dir.path().join("config.toml")).unwrap();
        assert_eq!(ExperimentFile::load(&toml_back, None, &[]).unwrap(), a.experiment);
        assert_eq!(RunArtifact::result_from_json(&json).unwrap(), a.result);
        assert_eq!(RunArtifact::result_from_json(&a.result.to_json()).unwrap(), a.result);
    }
}
