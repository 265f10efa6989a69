use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dkbo_cli::{cmd_diagnose, cmd_report, cmd_run, cmd_suggest, cmd_tell, cmd_validate, OutputFormat};

/// Bayesian optimization over fixed pools of embedded candidates.
#[derive(Parser)]
#[command(name = "dkbo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every surrogate × seed of a config and write metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the next candidate of an interactive session.
    Suggest {
        /// Session directory.
        #[arg(long)]
        out: PathBuf,
        /// Starts a new session when the directory holds none.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t)]
        format: OutputFormat,
    },
    /// Record an observed value in an interactive session.
    Tell {
        #[arg(long)]
        out: PathBuf,
        id: String,
        #[arg(allow_hyphen_values = true)]
        y: String,
    },
    /// Fit on a training split and report surrogate diagnostics.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        format: OutputFormat,
    },
    /// Aggregate the metrics in an output directory.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: OutputFormat,
    },
    /// Check a config and its dataset.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: OutputFormat,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    let result = match &cli.command {
        Command::Run { config, seed, workers, out } => cmd_run(config, *seed, *workers, out.as_deref(), &mut w),
        Command::Suggest { out, config, seed, format } => cmd_suggest(out, config.as_deref(), *seed, *format, &mut w),
        Command::Tell { out, id, y } => cmd_tell(out, id, y, &mut w),
        Command::Diagnose { config, seed, out, format } => cmd_diagnose(config, *seed, out.as_deref(), *format, &mut w),
        Command::Report { out, format } => cmd_report(out, *format, &mut w),
        Command::Validate { config, format } => cmd_validate(config, *format, &mut w),
    };
    let _ = w.flush();
    match result {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
