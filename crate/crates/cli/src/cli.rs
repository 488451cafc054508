use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fedinv_core::theory::{NormalDist, Theorem1Params};

use crate::check;
use crate::config::ExperimentFile;
use crate::error::{CliError, CliResult, ExitCode};
use crate::export;
use crate::presets;
use crate::run::{self, SweepParam};

#[derive(Parser, Debug)]
#[command(name = "fedinv", version, about = "Federated learning backdoor-defense simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one experiment and write JSON and CSV artifacts.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Artifact directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment per value of a hyper-parameter.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Combined CSV path; defaults to `<output.dir>/sweep_<param>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo check of a theoretical bound.
    Check {
        #[command(subcommand)]
        check: CheckCommand,
        /// Also write the JSON report here.
        #[arg(long, global = true)]
        out: Option<PathBuf>,
    },
    /// Export datasets or per-round CSVs.
    Export {
        #[command(subcommand)]
        what: ExportCommand,
    },
    /// List the bundled presets, or print one.
    Presets { name: Option<String> },
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Experiment file (TOML).
    #[arg(conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Bundled preset name instead of a file.
    #[arg(long)]
    pub preset: Option<String>,
    /// Replace the aggregator kind, keeping compatible parameters.
    #[arg(long)]
    pub aggregator: Option<String>,
    /// Dotted override, e.g. `--set aggregator.tau=0.4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    /// The file's text and a name used for default output paths.
    fn source(&self) -> CliResult<(String, String)> {
        match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
                let stem = path
                    .file_stem()
                    .map_or("run".into(), |s| s.to_string_lossy().into_owned());
                Ok((text, stem))
            }
            (None, Some(name)) => presets::preset(name)
                .map(|src| (src.to_string(), name.clone()))
                .ok_or_else(|| {
                    let known: Vec<_> = presets::names().collect();
                    CliError::validation(format!("unknown preset `{name}`; known: {}", known.join(", ")))
                }),
            (None, None) => Err(CliError::validation("give an experiment file or --preset")),
        }
    }

    fn load(&self) -> CliResult<(ExperimentFile, String)> {
        let (text, name) = self.source()?;
        Ok((
            ExperimentFile::load(&text, self.aggregator.as_deref(), &self.set)?,
            name,
        ))
    }
}

#[derive(Subcommand, Debug)]
pub enum CheckCommand {
    /// Trimmed-mean error bound under corruption.
    T1 {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0.01)]
        eta: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 2.0)]
        c: f64,
        #[arg(long, default_value_t = 0.0)]
        mean: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// AND-mask pass-probability bound.
    T2 {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        n_prime: usize,
        /// Benign mean/std ratio.
        #[arg(long, allow_hyphen_values = true)]
        phi: Option<f64>,
        /// Per-client flip probability, required when phi = 0.
        #[arg(long)]
        flip_probability: Option<f64>,
        /// Threshold in votes.
        #[arg(long)]
        tau_count: Option<u64>,
        /// Normalized threshold, converted with round(tau N).
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Expected-gradient sign on one feature; the full grid when no cell is given.
    T3 {
        #[arg(long, allow_hyphen_values = true, requires = "mu")]
        w: Option<f64>,
        #[arg(long, allow_hyphen_values = true, requires = "w")]
        mu: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Gradient sign consistency on the trigger feature of a scenario.
    C1 {
        #[command(flatten)]
        config: ConfigArgs,
        /// Model weights, comma-separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "1,0")]
        w: Vec<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand, Debug)]
pub enum ExportCommand {
    /// Client training sets and evaluation sets as CSV.
    Dataset {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-round CSV from a run's JSON artifact.
    Rounds {
        result: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn default_dir(file: &ExperimentFile, name: &str) -> PathBuf {
    file.output.dir.clone().unwrap_or_else(|| Path::new("runs").join(name))
}

fn run_check(check: CheckCommand) -> CliResult<check::CheckOutcome> {
    match check {
        CheckCommand::T1 {
            n,
            eta,
            delta,
            c,
            mean,
            sigma,
            trials,
            seed,
        } => check::t1(&Theorem1Params {
            dist: NormalDist { mean, std: sigma },
            n,
            eta,
            delta,
            c,
            trials,
            seed,
        }),
        CheckCommand::T2 {
            n,
            n_prime,
            phi,
            flip_probability,
            tau_count,
            tau,
            trials,
            seed,
        } => {
            let ratio = check::sign_ratio(phi, flip_probability)?;
            check::t2(ratio, n, n_prime, check::tau_votes(n, tau, tau_count)?, trials, seed)
        }
        CheckCommand::T3 {
            w,
            mu,
            sigma,
            samples,
            seed,
        } => {
            let cells = match (w, mu) {
                (Some(w), Some(mu)) => vec![(w, mu)],
                _ => check::t3_grid(),
            };
            check::t3(&cells, sigma, samples, seed)
        }
        CheckCommand::C1 {
            config,
            w,
            samples,
            seed,
        } => {
            let config = if config.config.is_none() && config.preset.is_none() {
                ConfigArgs {
                    preset: Some("appendix_d1_invariant".into()),
                    ..config
                }
            } else {
                config
            };
            let (file, _) = config.load()?;
            let scenario = file.scenario.build(file.seed)?;
            check::c1(&scenario, &w, samples, seed)
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Run { config, out: dir } => {
            let (file, name) = config.load()?;
            let dir = dir.unwrap_or_else(|| default_dir(&file, &name));
            let artifact = run::execute(&file)?;
            let written = run::write_artifacts(&artifact, &dir)?;
            writeln!(out, "{}", run::summary_line(&artifact.result))?;
            for p in written {
                writeln!(out, "wrote {}", p.display())?;
            }
        }
        Command::Sweep {
            config,
            param,
            values,
            out: csv_path,
        } => {
            let (text, name) = config.source()?;
            let base = ExperimentFile::load(&text, config.aggregator.as_deref(), &config.set)?;
            let csv_path =
                csv_path.unwrap_or_else(|| default_dir(&base, &name).join(format!("sweep_{}.csv", param.name())));
            let points = run::sweep(&text, config.aggregator.as_deref(), &config.set, param, &values)?;
            let mut buf = Vec::new();
            run::write_sweep_csv(param, &points, &mut buf)?;
            run::write_atomic(&csv_path, &buf)?;
            for p in &points {
                writeln!(
                    out,
                    "{}={} {}",
                    param.name(),
                    p.value,
                    run::summary_line(&p.artifact.result)
                )?;
            }
            writeln!(out, "wrote {}", csv_path.display())?;
        }
        Command::Check { check, out: path } => {
            let outcome = run_check(check)?;
            let text = serde_json::to_string_pretty(&outcome.report).expect("report is serializable");
            if let Some(p) = path {
                run::write_atomic(&p, text.as_bytes())?;
            }
            writeln!(out, "{text}")?;
            if !outcome.passed {
                return Err(CliError::violation("bound violated"));
            }
        }
        Command::Export { what } => match what {
            ExportCommand::Dataset { config, out: dir } => {
                let (file, _) = config.load()?;
                for p in export::datasets(&file, &dir)? {
                    writeln!(out, "wrote {}", p.display())?;
                }
            }
            ExportCommand::Rounds { result, out: path } => {
                let json = std::fs::read_to_string(&result)
                    .map_err(|e| CliError::validation(format!("{}: {e}", result.display())))?;
                export::rounds(&json, &path)?;
                writeln!(out, "wrote {}", path.display())?;
            }
        },
        Command::Presets { name: None } => {
            for n in presets::names() {
                writeln!(out, "{n}")?;
            }
        }
        Command::Presets { name: Some(name) } => {
            let src = presets::preset(&name).ok_or_else(|| CliError::validation(format!("unknown preset `{name}`")))?;
            write!(out, "{src}")?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = write!(err, "{}", e.render());
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::Ok as i32,
                _ => ExitCode::Validation as i32,
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => ExitCode::Ok as i32,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code as i32
        }
    }
}
