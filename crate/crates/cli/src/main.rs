use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use reddiff_cli::check;
use reddiff_cli::runner::{run, RunOverrides};
use reddiff_cli::sweep::sweep;

/// Variational diffusion sampling for inverse problems.
#[derive(Parser)]
#[command(name = "reddiff", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the sampler seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory (flag wins over REDDIFF_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid over one parameter: lambda, lr, steps, weighting, or plan.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. `10,100,1000` or `descending,random`.
        #[arg(long)]
        values: String,
    },
    /// Run the oracle and invariant verification suite.
    Check,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, out } => {
            let overrides = RunOverrides { seed, out_dir: out };
            match run(&config, &overrides) {
                Ok(outputs) => {
                    let summary = outputs.directory.join("summary.json");
                    println!("run complete: {}", summary.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Sweep {
            config,
            param,
            values,
        } => match sweep(&config, &param, &values) {
            Ok(outputs) => {
                println!("sweep complete: {}", outputs.csv_path.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
        Command::Check => ExitCode::from(check::run_all() as u8),
    }
}
