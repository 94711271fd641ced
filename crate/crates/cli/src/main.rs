//! `meanking`: command-line front end.
//!
//! Primary output goes to stdout (or `--out`), diagnostics to stderr. Exit
//! codes: 0 success, 1 no model or strategy exists, 2 usage or input error,
//! 3 numerical failure.

mod commands;
mod config;

use std::fs;
use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use meanking::Error;

use commands::{Failure, Output};
use config::{RunArgs, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "meanking", version, about = "Retrodiction strategies for the mean king problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Emit a basis set (Haar-random, MUB or Pauli) as JSON.
    Sample,
    /// Rank of the span of the hatted vectors and unbiasedness.
    Classify,
    /// Search for a classical joint model.
    Model {
        /// Use iterative proportional fitting instead of the linear program.
        #[arg(long)]
        fit: bool,
        #[arg(long, default_value_t = 10_000)]
        max_sweeps: usize,
    },
    /// Build and verify a safe strategy; emits strategy JSON.
    Strategy,
    /// Play the game with a strategy and count failures.
    Simulate,
    /// Unambiguous-retrodiction value from the semidefinite program.
    Value,
    /// One row of the Haar table (k = d + 1).
    Table,
    /// Qubit triples: fraction with a classical model, or the sampled triples.
    Bell {
        /// Emit every sampled triple with its membership flag.
        #[arg(long)]
        fig1: bool,
        /// Cross-check every sample with the linear program.
        #[arg(long)]
        check_lp: bool,
    },
    /// Gradient search towards mutually unbiased bases.
    Debias {
        #[arg(long, default_value_t = 10_000)]
        max_steps: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Classify => "classify",
            Command::Model { .. } => "model",
            Command::Strategy => "strategy",
            Command::Simulate => "simulate",
            Command::Value => "value",
            Command::Table => "table",
            Command::Bell { .. } => "bell",
            Command::Debias { .. } => "debias",
        }
    }
}

fn lib_exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 3,
        Error::Degenerate { .. } | Error::Precondition(_) => 1,
        _ => 2,
    }
}

fn emit(cfg: &RunConfig, out: &Output) -> std::io::Result<()> {
    if out.text.is_empty() {
        return Ok(());
    }
    match &cfg.output {
        Some(path) => fs::write(path, format!("{}\n", out.text)),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{}", out.text)
        }
    }
}

fn run(cli: Cli) -> ExitCode {
    let cfg = match RunConfig::new(cli.command.name(), cli.run) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Sample => commands::sample(&cfg).map(|o| (o, true)),
        Command::Classify => commands::classify(&cfg).map(|o| (o, true)),
        Command::Model { fit, max_sweeps } => commands::model(&cfg, *fit, *max_sweeps).map(|o| (o, true)),
        Command::Strategy => commands::strategy(&cfg).map(|o| (o, true)),
        Command::Simulate => commands::simulate(&cfg).map(|o| (o, true)),
        Command::Value => commands::value(&cfg),
        Command::Table => commands::table(&cfg).map(|o| (o, true)),
        Command::Bell { fig1, check_lp } => commands::bell(&cfg, *fig1, *check_lp).map(|o| (o, true)),
        Command::Debias { max_steps } => commands::debias_cmd(&cfg, *max_steps).map(|o| (o, true)),
    };
    match result {
        Ok((out, converged)) => {
            if let Err(e) = emit(&cfg, &out) {
                eprintln!("error: cannot write output: {e}");
                return ExitCode::from(2);
            }
            if !converged {
                eprintln!("error: solver did not reach the requested accuracy");
                ExitCode::from(3)
            } else if out.none {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(lib_exit_code(&e))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            ExitCode::from(if e.use_stderr() { 2 } else { 0 })
        }
    }
}
