use std::path::PathBuf;
use std::process::ExitCode;

use bgk::verify::Suite;
use clap::{Parser, Subcommand};

mod plot;
mod run;
mod snapshot;
mod verify;

/// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Writes to stdout, ignoring a closed pipe (`bgk ... | head`).
pub fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

pub fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser)]
#[command(name = "bgk", version, about = "BGK relaxation solver with built-in invariant checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured scenario and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; overrides `output.dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue an interrupted run from its last checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Run a seeded property suite and print residuals against tolerances.
    Verify {
        #[arg(long, default_value = "all", value_parser = parse_suite)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw diagnostics columns against time as an SVG line chart.
    Plot {
        csv: PathBuf,
        /// Comma-separated column names.
        #[arg(long, value_delimiter = ',', default_value = "linf_q")]
        columns: Vec<String>,
        /// Output file; defaults to the CSV path with an `.svg` extension.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        log_scale: bool,
    },
    /// Save or inspect binary snapshots.
    Snapshot {
        #[command(subcommand)]
        action: SnapshotAction,
    },
}

#[derive(Subcommand)]
enum SnapshotAction {
    /// Write the initial distribution of a configured scenario.
    Save {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a snapshot's metadata and conserved totals.
    Load {
        path: PathBuf,
        /// Check that the snapshot fits this config's grid.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse::<Suite>().map_err(|e| e.to_string())
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(runtime)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Run {
            config,
            out,
            resume,
        } => run::cmd_run(&config, out, resume),
        Command::Verify { suite, seed, out } => verify::cmd_verify(suite, seed, out.as_deref()),
        Command::Plot {
            csv,
            columns,
            out,
            log_scale,
        } => plot::cmd_plot(&csv, &columns, out, log_scale),
        Command::Snapshot { action } => match action {
            SnapshotAction::Save { config, out } => snapshot::cmd_save(&config, &out),
            SnapshotAction::Load { path, config } => snapshot::cmd_load(&path, config.as_deref()),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // --help and --version are not errors
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
