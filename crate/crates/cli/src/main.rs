use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dispersion_cli::config::{parse_config_text, parse_overrides, ConfigError};
use dispersion_cli::output::write_results;
use dispersion_cli::{run, Command, RunConfig};

/// Simulation and verification runs for the linear dispersion SDE.
#[derive(Debug, Parser)]
#[command(name = "dispersion", version)]
struct Cli {
    command: Command,
    /// Flat `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` overrides applied after the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn load(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let file = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| ConfigError::new("config", format!("{}: {e}", p.display())))?;
            parse_config_text(&text)?
        }
        None => Vec::new(),
    };
    RunConfig::build(cli.command, &file, &parse_overrides(&cli.overrides)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let outcome = match run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = write_results(&outcome.document, cfg.output.as_deref(), cfg.format) {
        eprintln!("error: writing results: {e}");
        return ExitCode::from(1);
    }
    match outcome.passed {
        Some(false) => {
            eprintln!("verification failed");
            ExitCode::from(3)
        }
        _ => ExitCode::SUCCESS,
    }
}
