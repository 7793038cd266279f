//! Command-line front end: dataset ingestion, estimation runs, parameter
//! selection, and Monte Carlo table generation.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 internal
//! error. Per-point estimation failures never abort a run; they are flagged
//! in the output's status column.

mod commands;
mod config;
mod data;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "tailquant",
    version,
    about = "Kernel-smoothed estimation of extreme conditional quantiles",
    after_help = "A TOML config file (--config) may supply any long option; \
                  command-line flags take precedence over the file, which takes \
                  precedence over built-in defaults. The effective configuration \
                  is echoed into every output header."
)]
struct Cli {
    /// TOML configuration file (flags override its values)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<std::path::PathBuf>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Conditional quantiles (or a survival curve) on an x-grid
    Fit(commands::FitArgs),
    /// Side-by-side extrapolated tail quantiles: RQ, RP and GP estimates
    Extreme(commands::ExtremeArgs),
    /// Data-driven bandwidth and sample-fraction selection
    Select(commands::SelectArgs),
    /// Monte Carlo benchmarks of the estimators on synthetic scenarios
    Simulate(commands::SimulateArgs),
}

/// A command failure carrying its exit code class.
#[derive(Debug)]
pub enum Failure {
    /// bad flags, bad config file, invalid parameter combination
    Config(String),
    /// unreadable or malformed input data
    Data(String),
    /// anything that should not happen
    Internal(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Internal(m) => m,
        }
    }
}

pub type CResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version print to stdout and are not errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let file_cfg = match config::FileConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(f) => {
            eprintln!("error: {}", f.message());
            return ExitCode::from(f.exit_code());
        }
    };

    let result = match cli.command {
        Cmd::Fit(args) => commands::cmd_fit(args, &file_cfg),
        Cmd::Extreme(args) => commands::cmd_extreme(args, &file_cfg),
        Cmd::Select(args) => commands::cmd_select(args, &file_cfg),
        Cmd::Simulate(args) => commands::cmd_simulate(args, &file_cfg),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
