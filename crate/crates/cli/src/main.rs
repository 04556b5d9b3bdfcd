use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use sgen_cli::commands;
use sgen_cli::config::{Overrides, RunConfig};
use sgen_cli::runner::{usage, Failure};

/// Generate C code with an LLM, test it, and harden it against likely
/// weaknesses using a guideline database.
#[derive(Parser)]
#[command(name = "sgen", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the workflow on one benchmark task.
    RunTask { task_id: String },
    /// Run every benchmark task and report Func@k and Func-Sec@k.
    Bench,
    /// Recompute a finished run's report and, with --rerun, replay it.
    ReplayVerify {
        run_dir: PathBuf,
        /// Re-execute from the run's cassettes and compare transcripts.
        #[arg(long)]
        rerun: bool,
    },
    /// Validate a guideline file.
    GuidelinesLint { path: PathBuf },
}

fn dispatch(cli: Cli) -> Result<String, Failure> {
    match cli.command {
        Command::RunTask { task_id } => commands::run_task(usage(RunConfig::resolve(&cli.overrides))?, &task_id),
        Command::Bench => commands::bench(usage(RunConfig::resolve(&cli.overrides))?),
        Command::ReplayVerify { run_dir, rerun } => commands::replay_verify(&run_dir, rerun),
        Command::GuidelinesLint { path } => commands::guidelines_lint(&path),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
