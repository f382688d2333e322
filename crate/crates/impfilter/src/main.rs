use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use impfilter::commands::{cmd_diagnose, cmd_run, cmd_sweep, load_spec, Overrides};
use impfilter::report::format_report;
use impfilter::Result;

/// Distributed importance filtering simulator.
#[derive(Debug, Parser)]
#[command(name = "impfilter", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured (scheme, rate, seed) combination.
    Run(CommonArgs),
    /// Compare schemes across rates and fit the scaling law.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated rates, replacing `experiment.rates`.
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
    },
    /// Check the estimation-error bound and write a report.
    Diagnose {
        #[command(flatten)]
        common: CommonArgs,
        /// Score field: model, smooth or constant.
        #[arg(long)]
        field: Option<String>,
    },
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Override any config key, e.g. `--set sim.nodes=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    rounds: Option<u64>,
    /// Use seeds 0..N.
    #[arg(long)]
    seeds: Option<u64>,
    /// Scheme to run (importance, uniform, genie, transmit_all). Repeatable.
    #[arg(long = "scheme")]
    schemes: Vec<String>,
    /// bernoulli or quota.
    #[arg(long)]
    transmission: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            set: self.set.clone(),
            rate: self.rate,
            rounds: self.rounds,
            seeds: self.seeds,
            schemes: self.schemes.clone(),
            transmission: self.transmission.clone(),
            output_dir: self.output_dir.clone(),
            ..Default::default()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let spec = load_spec(&common.config, &common.overrides())?;
            let runs = cmd_run(&spec)?;
            println!("{} runs written to {}", runs.len(), spec.output.dir.display());
        }
        Command::Sweep { common, rates } => {
            let overrides = Overrides {
                rates,
                ..common.overrides()
            };
            let spec = load_spec(&common.config, &overrides)?;
            print!("{}", cmd_sweep(&spec)?.text);
        }
        Command::Diagnose { common, field } => {
            let overrides = Overrides {
                field,
                ..common.overrides()
            };
            let spec = load_spec(&common.config, &overrides)?;
            let report = cmd_diagnose(&spec)?;
            if !report.neighbors_condition {
                eprintln!("warning: L < ln P, the variance term is not guaranteed to shrink");
            }
            print!("{}", format_report(&report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("impfilter: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
