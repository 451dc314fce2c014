//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::commands::{self, DETECTOR_NOTE, DISTRIBUTION_NOTE, SCENARIO_NOTE};
use crate::config::{keys_help, load};
use crate::error::{CliError, CliResult};
use crate::io::{read_input, write_output};

pub const THREADS_ENV: &str = "OUTLIERSEQ_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "outlierseq",
    version,
    about = "Find the outlying sequence among M samples, estimate divergences and simulate error curves",
    after_help = "Exit status: 0 on success, 1 on runtime errors, 2 on invalid input.\n\
                  OUTLIERSEQ_THREADS caps worker threads (0 or unset = all cores)."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set pi.variance=2` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Write output to this file (atomically) instead of standard output
    #[arg(long, short, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Output format
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct WithInput {
    #[command(flatten)]
    pub common: Common,
    /// Input file; omitted or `-` reads standard input
    #[arg(long, short, value_name = "PATH")]
    pub input: Option<PathBuf>,
}

fn help<T: Serialize + Default>(notes: &[&str]) -> String {
    let mut s = keys_help::<T>();
    for note in notes {
        s.push('\n');
        s.push_str(note);
    }
    s
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Partition KL estimate of D(sample || pi) for each sample in a CSV
    #[command(after_help = help::<commands::EstimateKlConfig>(&[DISTRIBUTION_NOTE]))]
    EstimateKl {
        #[command(flatten)]
        io: WithInput,
        /// Floor reference cell masses at this value; output is marked uncertified
        #[arg(long, value_name = "DELTA")]
        clamp_cell_mass: Option<f64>,
    },
    /// Unbiased MMD^2 estimate between each sample in a CSV and pi
    #[command(after_help = help::<commands::EstimateMmdConfig>(&[DISTRIBUTION_NOTE]))]
    EstimateMmd {
        #[command(flatten)]
        io: WithInput,
    },
    /// Pick the outlying sequence among those in a CSV
    #[command(after_help = help::<commands::DetectConfig>(&[DISTRIBUTION_NOTE, DETECTOR_NOTE]))]
    Detect {
        #[command(flatten)]
        io: WithInput,
    },
    /// Divergences and error-exponent bounds for a (pi, mu) pair
    #[command(after_help = help::<commands::AnalyzeConfig>(&[DISTRIBUTION_NOTE]))]
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo error probabilities over a grid of sample sizes
    #[command(after_help = help::<commands::SimulateConfig>(&[DISTRIBUTION_NOTE, DETECTOR_NOTE, SCENARIO_NOTE]))]
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit error exponents to a simulated error curve (CSV or JSON)
    #[command(after_help = help::<commands::FitConfig>(&[]))]
    FitExponent {
        #[command(flatten)]
        io: WithInput,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::EstimateKl { io, .. }
            | Command::EstimateMmd { io }
            | Command::Detect { io }
            | Command::FitExponent { io } => &io.common,
            Command::Analyze { common } | Command::Simulate { common } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::EstimateKl { .. } => "estimate-kl",
            Command::EstimateMmd { .. } => "estimate-mmd",
            Command::Detect { .. } => "detect",
            Command::Analyze { .. } => "analyze",
            Command::Simulate { .. } => "simulate",
            Command::FitExponent { .. } => "fit-exponent",
        }
    }
}

fn json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn settings<T: Serialize + DeserializeOwned + Default>(common: &Common) -> CliResult<T> {
    load(common.config.as_deref(), &common.overrides)
}

fn threads_from_env() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(CliError::invalid(THREADS_ENV, e.to_string())),
        Ok(s) if s.trim().is_empty() => Ok(0),
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::invalid(THREADS_ENV, format!("expected a thread count, got {s:?}"))),
    }
}

/// Execute one parsed command and return the bytes to write.
pub fn execute(command: &Command) -> CliResult<Vec<u8>> {
    let common = command.common();
    let format = common.format.unwrap_or(match command {
        Command::Simulate { .. } => Format::Csv,
        _ => Format::Json,
    });
    if format == Format::Csv && matches!(command, Command::Detect { .. } | Command::Analyze { .. }) {
        return Err(CliError::invalid(
            "format",
            format!("{} only writes json", command.name()),
        ));
    }
    match command {
        Command::EstimateKl { io, clamp_cell_mass } => {
            let mut config: commands::EstimateKlConfig = settings(common)?;
            if let Some(delta) = clamp_cell_mass {
                config.clamp_cell_mass = *delta;
            }
            let report = commands::estimate_kl(&config, &read_input(io.input.as_deref())?)?;
            match format {
                Format::Json => json(&report),
                Format::Csv => commands::estimates_csv(
                    &["index", "n", "cells", "estimate"],
                    report.estimates.iter().map(|e| {
                        vec![
                            e.index.to_string(),
                            e.n.to_string(),
                            e.cells.to_string(),
                            e.estimate.to_string(),
                        ]
                    }),
                ),
            }
        }
        Command::EstimateMmd { io } => {
            let config: commands::EstimateMmdConfig = settings(common)?;
            let report = commands::estimate_mmd(&config, &read_input(io.input.as_deref())?)?;
            match format {
                Format::Json => json(&report),
                Format::Csv => commands::estimates_csv(
                    &["index", "n", "estimate"],
                    report
                        .estimates
                        .iter()
                        .map(|e| vec![e.index.to_string(), e.n.to_string(), e.estimate.to_string()]),
                ),
            }
        }
        Command::Detect { io } => {
            let config: commands::DetectConfig = settings(common)?;
            json(&commands::detect(&config, &read_input(io.input.as_deref())?)?)
        }
        Command::Analyze { .. } => {
            let config: commands::AnalyzeConfig = settings(common)?;
            json(&commands::analyze(&config)?)
        }
        Command::Simulate { .. } => {
            let config: commands::SimulateConfig = settings(common)?;
            let curve = commands::simulate(&config)?;
            match format {
                Format::Csv => Ok(curve.to_csv_string().into_bytes()),
                Format::Json => {
                    let fits = commands::simulate_fits(&config, &curve)?;
                    json(&commands::SimulateReport { curve, fits })
                }
            }
        }
        Command::FitExponent { io } => {
            let config: commands::FitConfig = settings(common)?;
            let report = commands::fit(&config, &read_input(io.input.as_deref())?)?;
            match format {
                Format::Json => json(&report),
                Format::Csv => commands::fits_csv(&report.fits),
            }
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let threads = threads_from_env()?;
    let bytes = outlierseq_core::with_threads(threads, || execute(&cli.command))
        .map_err(|e| CliError::runtime(e.to_string()))??;
    write_output(cli.command.common().output.as_deref(), &bytes)
}

/// Parse `args`, run, report any error on standard error and return the
/// process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
