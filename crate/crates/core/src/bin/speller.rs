use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use speller_core::experiment::{self, ExperimentConfig, ExperimentError, SweepParam};

#[derive(Parser)]
#[command(
    name = "speller",
    version,
    about = "Active Inference P300-speller experiments"
)]
struct Cli {
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write summaries.csv, results.json, plotdata.csv.
    Run {
        config: PathBuf,
        /// Override master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override output.dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run once per parameter value and stack the results.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a results.json and write plotdata.csv beside it.
    Report {
        table: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Print the classifier each subject's model is built from.
    Calibrate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

fn load(
    path: &PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<ExperimentConfig, ExperimentError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    if let Some(out) = out {
        config.output.dir = out;
    }
    Ok(config)
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize")
}

fn execute(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let config = load(&config, seed, out)?;
            let table = experiment::run(&config, cli.workers)?;
            println!("{}", experiment::summarize_table(&table)?);
            eprintln!("wrote results to {}", config.output.dir.display());
        }
        Command::Sweep {
            config,
            param,
            values,
            seed,
            out,
        } => {
            let config = load(&config, seed, out)?;
            let table = experiment::sweep(&config, param, &values, cli.workers)?;
            for entry in &table.entries {
                println!("{} = {}", param.name(), entry.value);
                println!("{}", experiment::summarize_table(&entry.table)?);
            }
            eprintln!("wrote sweep to {}", config.output.dir.display());
        }
        Command::Report { table, json } => {
            let report = experiment::report(&table)?;
            if json {
                println!("{}", to_json(&report));
            } else {
                print!("{report}");
            }
        }
        Command::Calibrate { config, seed } => {
            let config = load(&config, seed, None)?;
            println!("{}", to_json(&experiment::calibrate(&config)?));
        }
        Command::DefaultConfig => print!("{}", ExperimentConfig::default().to_toml_string()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
