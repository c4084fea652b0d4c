use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eprsim_cli::commands;

#[derive(Parser)]
#[command(
    name = "eprsim",
    version,
    about = "Two-station EPR thought-experiment lab: seeded locality-enforcing runs, \
             hidden-variable strategies, exact same-color oracles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the eight instruction sets with their exact same-color
    /// probability under uniform settings, and the classic minimum.
    Enumerate,
    /// Run the configured experiment; writes records (JSONL), a report
    /// (JSON) and optionally a per-pair CSV.
    Run {
        /// Path to the TOML run configuration.
        config: PathBuf,
        /// Worker threads for trial execution (results are identical
        /// for any count).
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Evaluate the configured adversarial minimum exactly.
    Oracle {
        /// Path to a TOML configuration with an [oracle] section.
        config: PathBuf,
    },
    /// Recompute a report from a records file.
    Report {
        /// Records file (line-delimited JSON) produced by `run`.
        #[arg(long = "from-records")]
        from_records: PathBuf,
        /// Original run configuration; with it the full report is
        /// reproduced byte-identically.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    let outcome = match &cli.command {
        Command::Enumerate => commands::cmd_enumerate(&mut stdout),
        Command::Run { config, workers } => commands::cmd_run(config, *workers, &mut stdout),
        Command::Oracle { config } => commands::cmd_oracle(config, &mut stdout),
        Command::Report {
            from_records,
            config,
        } => commands::cmd_report(from_records, config.as_deref(), &mut stdout),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
