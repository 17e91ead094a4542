//! `emc`: build, analyze and verify first-order equivalent Markov chains.
//!
//! Exit codes: 0 success, 1 invalid input, 2 violated hypothesis (for
//! example a reducible chain), 3 enumeration cap exceeded, 4 verification
//! failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use emc_core::EmcError;

use config::{Command, Flags, RunConfig, OUT_DIR_ENV};
use output::{append_log, write_atomic, write_bundle, ReportBundle, Status, TOOL, VERSION};

#[derive(Parser, Debug)]
#[command(
    name = "emc",
    version,
    about = "First-order equivalent Markov chains of non-Markov processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Sub {
    /// Sample a trajectory ensemble (JSONL).
    Simulate,
    /// Enumerate the joint law: marginals, exact one-step matrices, history gaps.
    Oracle,
    /// Build the equivalent chain and compare marginals with the parent's.
    Emc,
    /// Estimate one-step matrices from an ensemble.
    Estimate,
    /// Structure, stationary law and convergence profile of a matrix.
    Analyze,
    /// Censored chain on a state subset and the A-hit distribution check.
    Censor,
    /// Run every check on a built-in scenario (or `all`).
    Verify,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Simulate => Command::Simulate,
            Sub::Oracle => Command::Oracle,
            Sub::Emc => Command::Emc,
            Sub::Estimate => Command::Estimate,
            Sub::Analyze => Command::Analyze,
            Sub::Censor => Command::Censor,
            Sub::Verify => Command::Verify,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(EmcError),
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn io(path: PathBuf, e: std::io::Error) -> Self {
        CliError::Core(EmcError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                EmcError::Validation { .. } | EmcError::Range { .. } | EmcError::Io { .. } => 1,
                EmcError::Hypothesis { .. } => 2,
                EmcError::Size { .. } => 3,
            },
        }
    }

    fn outcome(&self) -> &'static str {
        match self.code() {
            2 => "hypothesis_violated",
            3 => "size_exceeded",
            _ => "invalid_input",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "cli: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<EmcError> for CliError {
    fn from(e: EmcError) -> Self {
        CliError::Core(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let command = Command::from(cli.command);
    let env_out = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    let config = match RunConfig::resolve(command, cli.flags, env_out) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.code() as u8);
        }
    };

    let (report, artifacts, status) = match commands::run(&config) {
        Ok(done) => {
            let mut names = Vec::new();
            let mut failed = None;
            for (name, contents) in &done.artifacts {
                if let Err(e) = write_atomic(&config.out, name, contents.as_bytes()) {
                    failed = Some(e);
                    break;
                }
                names.push(name.clone());
            }
            match failed {
                Some(e) => (serde_json::Value::Null, names, error_status(&e)),
                None => (done.report, names, done.status),
            }
        }
        Err(e) => (serde_json::Value::Null, Vec::new(), error_status(&e)),
    };
    let bundle = ReportBundle {
        tool: TOOL,
        version: VERSION,
        config: &config,
        report,
        artifacts,
        status,
    };
    let mut code = bundle.status.code;
    if let Err(e) = write_bundle(&bundle) {
        eprintln!("error: {e}");
        code = code.max(e.code());
    } else {
        println!("{}", config.out.join(format!("{}.json", command.name())).display());
    }
    if let Some(m) = &bundle.status.message {
        eprintln!("{}: {m}", bundle.status.outcome);
    }
    append_log(&config.out, command.name(), &bundle.status);
    ExitCode::from(code as u8)
}

fn error_status(e: &CliError) -> Status {
    Status {
        code: e.code(),
        outcome: e.outcome(),
        message: Some(e.to_string()),
    }
}
