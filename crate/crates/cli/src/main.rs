mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

pub enum CliError {
    Usage(String),
    Core(osrcal_core::Error),
}

impl From<osrcal_core::Error> for CliError {
    fn from(e: osrcal_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(osrcal_core::Error::Fit(_)) => 3,
            CliError::Core(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.kind(),
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

/// One line on stderr: `{"code":N,"error":"<kind>","message":"..."}`.
fn report(err: &CliError) -> ExitCode {
    let line = serde_json::json!({
        "code": err.code(),
        "error": err.kind(),
        "message": err.message(),
    });
    eprintln!("{line}");
    ExitCode::from(err.code())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Split(a) => commands::split(a),
        Command::Synth(a) => commands::synth(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Aggregate(a) => commands::aggregate(a),
        Command::Diagram(a) => commands::diagram(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid usage");
            let message = first.strip_prefix("error: ").unwrap_or(first).to_string();
            return report(&CliError::Usage(message));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
