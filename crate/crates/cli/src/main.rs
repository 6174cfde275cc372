use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use vais_cli::config::{self, ExperimentId, Overrides};
use vais_cli::{results, run, CliError};

#[derive(Parser)]
#[command(name = "vais", version, about = "VAE importance-sampling experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file and write its artifacts.
    Run(RunArgs),
    /// Recompute and print the summary table for a finished run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Experiment id override.
    #[arg(long, value_parser = parse_experiment)]
    experiment: Option<ExperimentId>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Replication count override.
    #[arg(long = "n-rep")]
    n_rep: Option<usize>,
    /// Worker thread count override (never changes results).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding results.json.
    #[arg(long = "in")]
    input: PathBuf,
}

fn parse_experiment(s: &str) -> Result<ExperimentId, String> {
    s.parse()
}

fn real_main() -> Result<(), CliError> {
    match Cli::parse().command {
        Command::Run(args) => {
            let overrides = Overrides {
                experiment: args.experiment,
                seed: args.seed,
                n_rep: args.n_rep,
                threads: args.threads,
                out: args.out,
            };
            let cfg = config::load(&args.config, &overrides)?;
            let table = run::run(&cfg)?;
            print!("{table}");
            println!("artifacts: {}", cfg.out.display());
            Ok(())
        }
        Command::Report(args) => {
            let table = results::report(&args.input)?;
            print!("{table}");
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
