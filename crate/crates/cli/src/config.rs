//! Flags shared by all subcommands and their validation.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, ValueEnum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// Dimension d.
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Number of bases k (default d+1).
    #[arg(long, global = true)]
    pub bases: Option<usize>,
    /// Number of random samples.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Number of simulated game rounds.
    #[arg(long, global = true)]
    pub rounds: Option<usize>,
    /// Seed for all randomness.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Tolerance override for the command's main solver.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Worker threads for sampling commands.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Input file (basis set, or strategy for `simulate`).
    #[arg(long = "in", global = true)]
    pub input: Option<PathBuf>,
    /// Write the primary output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Use the prime-dimension mutually unbiased bases.
    #[arg(long, global = true)]
    pub mub: bool,
    /// Use the Pauli bases (d = 2, k = 3).
    #[arg(long, global = true)]
    pub pauli: bool,
}

/// Validated run parameters.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: String,
    pub dim: Option<usize>,
    pub bases: Option<usize>,
    pub samples: Option<usize>,
    pub rounds: Option<usize>,
    pub seed: u64,
    pub tol: Option<f64>,
    pub jobs: usize,
    pub format: Option<Format>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub mub: bool,
    pub pauli: bool,
}

#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn positive(name: &str, v: Option<usize>) -> Result<(), UsageError> {
    match v {
        Some(0) => Err(UsageError(format!("--{name} must be positive"))),
        _ => Ok(()),
    }
}

impl RunConfig {
    pub fn new(command: &str, args: RunArgs) -> Result<Self, UsageError> {
        positive("dim", args.dim)?;
        positive("bases", args.bases)?;
        positive("samples", args.samples)?;
        positive("rounds", args.rounds)?;
        positive("jobs", Some(args.jobs))?;
        if let Some(d) = args.dim {
            if d < 2 {
                return Err(UsageError("--dim must be at least 2".into()));
            }
        }
        if let Some(t) = args.tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(UsageError("--tol must be a positive number".into()));
            }
        }
        if args.mub && args.pauli {
            return Err(UsageError("--mub and --pauli are mutually exclusive".into()));
        }
        if args.input.is_some() && (args.mub || args.pauli) {
            return Err(UsageError("--in cannot be combined with --mub or --pauli".into()));
        }
        if let Some(path) = &args.input {
            if !path.is_file() {
                return Err(UsageError(format!("input file {} does not exist", path.display())));
            }
        }
        if let Some(path) = &args.out {
            let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
            if parent.is_some_and(|p| !p.is_dir()) {
                return Err(UsageError(format!("output directory for {} does not exist", path.display())));
            }
        }
        Ok(Self {
            command: command.to_string(),
            dim: args.dim,
            bases: args.bases,
            samples: args.samples,
            rounds: args.rounds,
            seed: args.seed,
            tol: args.tol,
            jobs: args.jobs,
            format: args.format,
            input: args.input,
            output: args.out,
            mub: args.mub,
            pauli: args.pauli,
        })
    }

    /// The requested format, if the command supports it.
    pub fn format_or(&self, default: Format, csv_supported: bool) -> Result<Format, UsageError> {
        match self.format.unwrap_or(default) {
            Format::Csv if !csv_supported => Err(UsageError(format!("`{}` has no CSV output", self.command))),
            f => Ok(f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_values() {
        let args = RunArgs { dim: Some(1), jobs: 1, ..RunArgs::default() };
        assert!(RunConfig::new("sample", args).is_err());
        let args = RunArgs { samples: Some(0), jobs: 1, ..RunArgs::default() };
        assert!(RunConfig::new("table", args).is_err());
        let args = RunArgs { mub: true, pauli: true, jobs: 1, ..RunArgs::default() };
        assert!(RunConfig::new("sample", args).is_err());
        let args = RunArgs { input: Some("/nonexistent/file.json".into()), jobs: 1, ..RunArgs::default() };
        assert!(RunConfig::new("classify", args).is_err());
        let args = RunArgs { tol: Some(-1.0), jobs: 1, ..RunArgs::default() };
        assert!(RunConfig::new("model", args).is_err());
    }

    #[test]
    fn csv_only_where_supported() {
        let args = RunArgs { format: Some(Format::Csv), jobs: 1, ..RunArgs::default() };
        let cfg = RunConfig::new("value", args).unwrap();
        assert!(cfg.format_or(Format::Json, false).is_err());
        assert_eq!(cfg.format_or(Format::Json, true).unwrap(), Format::Csv);
    }
}
