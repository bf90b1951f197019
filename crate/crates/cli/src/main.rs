use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use colehopf_cli::config::{parse_config_for, Command};
use colehopf_cli::{dispatch, Failure};

#[derive(Parser)]
#[command(name = "colehopf", version, about = "Cole–Hopf reduction of quadratic-gradient control problems to heat-equation control")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Io {
    /// Run configuration (INI-style).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `io.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check condition (H) and report α.
    CheckPhi(Io),
    /// Tabulate φ̂ on the configured hull and write table.csv.
    TransformTable(Io),
    /// Forward nonlinear solve with a fixed control, plus the bridge check.
    Simulate(Io),
    /// Heat-equation control synthesis (penalized HUM).
    Control(Io),
    /// Full reduction: transform, control, map back, verify, certify.
    Pipeline(Io),
}

fn init_logging() {
    let level = match std::env::var("COLEHOPF_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        Ok("info") | Err(_) => log::LevelFilter::Info,
        Ok(other) => {
            eprintln!("COLEHOPF_LOG={other} not recognised (quiet, info, debug); using info");
            log::LevelFilter::Info
        }
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let (command, io) = match cli.command {
        Cmd::CheckPhi(io) => (Command::CheckPhi, io),
        Cmd::TransformTable(io) => (Command::TransformTable, io),
        Cmd::Simulate(io) => (Command::Simulate, io),
        Cmd::Control(io) => (Command::Control, io),
        Cmd::Pipeline(io) => (Command::Pipeline, io),
    };
    let text = match std::fs::read_to_string(&io.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", io.config.display());
            return ExitCode::from(Failure::Config as u8);
        }
    };
    let config = match parse_config_for(&text, Some(command)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", io.config.display());
            return ExitCode::from(Failure::Config as u8);
        }
    };
    let out = io.out.unwrap_or_else(|| config.io.out_dir.clone());
    let outcome = dispatch(&config, &out);
    log::info!("wrote {} (exit {})", out.join("report.json").display(), outcome.code);
    ExitCode::from(outcome.code as u8)
}
