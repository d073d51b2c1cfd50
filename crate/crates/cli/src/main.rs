//! `qvflab`: runs one experiment from a JSON config and writes CSV/JSON
//! artifacts.
//!
//! Exit codes: 0 success, 1 validation error, 2 a `--check` assertion failed,
//! 3 numerical or runtime failure. Errors are also reported as one JSON
//! object on stderr.

mod commands;
mod config;
mod output;

use clap::Parser;
use config::{Command, ExperimentConfig};
use output::Artifacts;
use qvflab_core::Error;
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "qvflab", version, about = "Conservative lattice dynamics with quadratic variance invariants")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Evaluate the command's acceptance assertions and set the exit code.
    #[arg(long)]
    check: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Validation,
    Check,
    Numerical,
}

impl FailureKind {
    fn code(self) -> u8 {
        match self {
            FailureKind::Validation => 1,
            FailureKind::Check => 2,
            FailureKind::Numerical => 3,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Failure {
    kind: FailureKind,
    message: String,
}

impl Failure {
    pub fn validation(message: String) -> Self {
        Self { kind: FailureKind::Validation, message }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match e {
            Error::QuadratureFailure { .. }
            | Error::IntegrationFailure(_)
            | Error::RateOverflow { .. }
            | Error::FiberTooLarge { .. } => FailureKind::Numerical,
            _ => FailureKind::Validation,
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self { kind: FailureKind::Numerical, message: format!("i/o: {e}") }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let bytes = std::fs::read(&cli.config)
        .map_err(|e| Failure::validation(format!("cannot read {}: {e}", cli.config.display())))?;
    let cfg: ExperimentConfig =
        serde_json::from_slice(&bytes).map_err(|e| Failure::validation(format!("config: {e}")))?;
    if let Some(c) = cfg.command {
        if c != cli.command {
            return Err(Failure::validation(format!(
                "config is for `{}` but `{}` was requested",
                c.name(),
                cli.command.name()
            )));
        }
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::validation(format!("thread pool: {e}")))?;
    }
    let dir = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("qvflab-out"));
    let mut art = Artifacts::new(&dir, cli.command.name(), &bytes)?;
    let findings = match cli.command {
        Command::Classify => commands::classify(&cfg, &mut art)?,
        Command::Verify => commands::verify(&cfg, &mut art)?,
        Command::Simulate => commands::simulate_cmd(&cfg, &mut art)?,
        Command::Hydro => commands::hydro(&cfg, &mut art)?,
        Command::Correlations => commands::correlations(&cfg, &mut art)?,
        Command::Walk => commands::walk(&cfg, &mut art)?,
    };
    for p in art.written() {
        println!("wrote {}", p.display());
    }
    if cli.check {
        for c in &findings.checks {
            println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        if !findings.passed() {
            let failed = findings.checks.iter().filter(|c| !c.pass).count();
            return Err(Failure { kind: FailureKind::Check, message: format!("{failed} check(s) failed") });
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let doc = serde_json::json!({ "error": f.kind, "message": f.message, "exit_code": f.kind.code() });
            eprintln!("{doc}");
            ExitCode::from(f.kind.code())
        }
    }
}
