use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{Command, Flags, RunConfig};

/// Robust individualized treatment rules for censored survival outcomes.
#[derive(Debug, Parser)]
#[command(name = "robust-itr", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Draw a simulated training set and write it as CSV.
    Simulate(Flags),
    /// Fit one rule on a CSV dataset or a simulated scenario.
    Train(Flags),
    /// Evaluate a stored rule by simulation or by IPW on a dataset.
    Evaluate(Flags),
    /// Replicated simulation study comparing all methods.
    Experiment(Flags),
    /// Repeated k-fold cross-validation on a dataset.
    Cv(Flags),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Solver(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Solver(m) => f.write_str(m),
        }
    }
}

impl From<robust_itr::Error> for CliError {
    fn from(e: robust_itr::Error) -> Self {
        use robust_itr::Error as E;
        let msg = e.to_string();
        if e.is_solver_failure() {
            return CliError::Solver(msg);
        }
        match e {
            E::InvalidInput(_) | E::UnknownScenario(_) => CliError::Usage(msg),
            _ => CliError::Data(msg),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let (command, flags) = match cli.command {
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::Train(f) => (Command::Train, f),
        Sub::Evaluate(f) => (Command::Evaluate, f),
        Sub::Experiment(f) => (Command::Experiment, f),
        Sub::Cv(f) => (Command::Cv, f),
    };
    let result = RunConfig::resolve(command, &flags).and_then(|cfg| commands::run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
