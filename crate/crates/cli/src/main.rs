//! `kmc`: runs fits, chains and the benchmark studies, writing CSV and JSON
//! into an output directory.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use commands::{OutDir, SampleConfig};
use kmc_core::experiments::{AbcStudyConfig, AcceptanceBenchmarkConfig, BananaStudyConfig, FitConfig, TrajectoryStudyConfig};
use kmc_core::KmcError;

const EXIT_INPUT: u8 = 1;
const EXIT_NUMERIC: u8 = 2;

#[derive(Parser)]
#[command(name = "kmc", version, about = "Gradient-free kernel Hamiltonian Monte Carlo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; keys not given keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set sampler.iterations=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
    /// Output directory, created if missing.
    #[arg(long, required_unless_present = "print_config")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a surrogate to points in a CSV file.
    Fit {
        /// CSV with a header row, one point per row.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run one chain on a named target.
    Sample(Common),
    /// Exact and surrogate trajectories on a standard Gaussian.
    Trajectories(Common),
    /// Hypothetical acceptance over dimension and training-size grids.
    AcceptanceBenchmark(Common),
    /// RW, HMC and KMC on the banana target.
    Banana(Common),
    /// Pseudo-marginal ABC study and the log-normal table.
    Abc(Common),
    /// Metrics of an existing chain CSV.
    Diagnose {
        #[arg(long)]
        chain: PathBuf,
        /// Points to compare against with the cubic polynomial-kernel MMD.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
        /// Write `diagnose.json` here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Resolves the config, records it, runs `body` and writes the timing log.
fn run_with<T, F>(name: &str, common: &Common, inputs: serde_json::Value, body: F) -> Result<()>
where
    T: Serialize + DeserializeOwned + Default,
    F: FnOnce(&T, &mut OutDir) -> Result<()>,
{
    let config: T = config::resolve(common.config.as_deref(), &common.overrides)?;
    if common.print_config {
        print_json(&config)?;
        return Ok(());
    }
    let Some(dir) = &common.out else { anyhow::bail!("--out is required") };
    let mut out = OutDir::create(dir)?;
    commands::write_resolved(&out, name, inputs, &config)?;
    body(&config, &mut out)?;
    out.finish()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { data, common } => {
            let inputs = json!({ "data": data });
            run_with::<FitConfig, _>("fit", &common, inputs, |c, out| commands::fit(&data, c, out))
        }
        Command::Sample(common) => run_with::<SampleConfig, _>("sample", &common, json!({}), commands::sample),
        Command::Trajectories(common) => {
            run_with::<TrajectoryStudyConfig, _>("trajectories", &common, json!({}), commands::trajectories)
        }
        Command::AcceptanceBenchmark(common) => run_with::<AcceptanceBenchmarkConfig, _>(
            "acceptance-benchmark",
            &common,
            json!({}),
            commands::acceptance_benchmark,
        ),
        Command::Banana(common) => run_with::<BananaStudyConfig, _>("banana", &common, json!({}), commands::banana),
        Command::Abc(common) => run_with::<AbcStudyConfig, _>("abc", &common, json!({}), commands::abc),
        Command::Diagnose { chain, reference, burn_in, out } => {
            let report = commands::diagnose(&chain, reference.as_deref(), burn_in)?;
            match out {
                Some(dir) => OutDir::create(&dir)?.json("diagnose.json", &report)?,
                None => print_json(&report)?,
            }
            Ok(())
        }
    }
}

/// Prints to stdout; a closed pipe is not an error.
fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Numeric failures anywhere in the error chain map to exit code 2;
/// everything else is an input error.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err.chain().any(|e| e.downcast_ref::<KmcError>().is_some_and(KmcError::is_numeric));
    if numeric {
        EXIT_NUMERIC
    } else {
        EXIT_INPUT
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INPUT) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
