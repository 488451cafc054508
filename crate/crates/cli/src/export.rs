//! `export`: client datasets and per-round CSVs.

use std::path::{Path, PathBuf};

use fedinv_core::harness::{write_rounds_csv, Simulation};
use fedinv_core::model::Sample;
use fedinv_core::synthdata::write_dataset_csv;

use crate::config::ExperimentFile;
use crate::error::CliResult;
use crate::run::{write_atomic, RunArtifact};

fn dataset_file(path: PathBuf, samples: &[Sample]) -> CliResult<PathBuf> {
    let mut buf = Vec::new();
    write_dataset_csv(samples, &mut buf)?;
    write_atomic(&path, &buf)?;
    Ok(path)
}

/// Writes `client_<id>.csv` for every client plus the two evaluation sets.
pub fn datasets(file: &ExperimentFile, dir: &Path) -> CliResult<Vec<PathBuf>> {
    let sim = Simulation::new(file.run_config()?)?;
    let mut written = Vec::new();
    for id in 0..sim.config.scenario.num_clients {
        written.push(dataset_file(dir.join(format!("client_{id}.csv")), sim.dataset(id))?);
    }
    written.push(dataset_file(dir.join("eval_main.csv"), sim.main_eval())?);
    written.push(dataset_file(dir.join("eval_backdoor.csv"), sim.backdoor_eval())?);
    Ok(written)
}

/// Converts a run's JSON artifact into the per-round CSV.
pub fn rounds(json: &str, out: &Path) -> CliResult<()> {
    let result = RunArtifact::result_from_json(json)?;
    let mut buf = Vec::new();
    write_rounds_csv(&result.rounds, &mut buf)?;
    write_atomic(out, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;

    #[test]
    fn exports_every_client() {
        let dir = tempfile::tempdir().unwrap();
        let f = ExperimentFile::load(
            preset("appendix_d1_fedavg").unwrap(),
            None,
            &[
                "scenario.samples_per_client=20".into(),
                "training.eval_samples=40".into(),
            ],
        )
        .unwrap();
        let paths = datasets(&f, dir.path()).unwrap();
        assert_eq!(paths.len(), 12);
        let text = std::fs::read_to_string(dir.path().join("client_9.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), "f0,f1,label");
        assert_eq!(text.lines().count(), 21);
        let eval = std::fs::read_to_string(dir.path().join("eval_backdoor.csv")).unwrap();
        assert!(eval.lines().skip(1).all(|l| l.ends_with(",1")));
    }
}
