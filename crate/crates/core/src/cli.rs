//! Command-line front end. `run` takes the full argument list, so the
//! binary and in-process callers share one code path.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::harness::{self, ExperimentConfig};

/// Iterative consistency training on analytically tractable targets.
#[derive(Parser)]
#[command(name = "ict", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the noise schedule and check its properties.
    Schedule(Common),
    /// Run the numerical checks on the configured target.
    Verify(Common),
    /// Train a consistency stack and save it.
    Train(Common),
    /// Draw one-shot samples from a saved stack.
    Sample(Common),
    /// Sweep T and fit the decay of W1 between generated and true samples.
    Scaling(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        // csv is the only output format
        let Format::Csv = self.format;
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Outcome {
    Ok,
    AssertionFailed,
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    let verdict = |ok: bool| {
        if ok {
            Outcome::Ok
        } else {
            Outcome::AssertionFailed
        }
    };
    match cli.command {
        Command::Schedule(c) => {
            let report = harness::run_schedule(&c.config()?)?;
            println!("{}", report.summary());
            Ok(verdict(report.passed()))
        }
        Command::Verify(c) => {
            let out = harness::run_verify(&c.config()?)?;
            println!("{}", out.summary());
            Ok(verdict(out.passed()))
        }
        Command::Train(c) => {
            let cfg = c.config()?;
            let stack = harness::run_train(&cfg)?;
            println!(
                "wrote {} ({} steps)",
                cfg.stack_path().display(),
                stack.steps()
            );
            Ok(Outcome::Ok)
        }
        Command::Sample(c) => {
            let cfg = c.config()?;
            let n = harness::run_sample(&cfg)?;
            println!(
                "wrote {n} samples to {}",
                cfg.out_dir().join("samples.csv").display()
            );
            Ok(Outcome::Ok)
        }
        Command::Scaling(c) => {
            let out = harness::run_scaling(&c.config()?)?;
            println!("{}", out.summary());
            Ok(Outcome::Ok)
        }
    }
}

/// Exit code for success.
pub const EXIT_OK: u8 = 0;
/// Exit code when an asserted check fails.
pub const EXIT_ASSERTION: u8 = 1;
/// Exit code for usage and configuration errors.
pub const EXIT_USAGE: u8 = 2;

/// Parse `args` (program name first), run the command and return the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::AssertionFailed) => EXIT_ASSERTION,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            if matches!(e, Error::Training { .. } | Error::NonFiniteFlow { .. }) {
                EXIT_ASSERTION
            } else {
                EXIT_USAGE
            }
        }
    }
}
