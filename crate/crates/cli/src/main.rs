mod analyze;
mod args;
mod config;
mod manifest;
mod power;
mod simulate;
mod train;

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use args::{Cli, Command};

/// Errors split by exit status: usage problems exit 2, runtime failures 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses a flag value with the library's `FromStr`; failures are usage errors.
pub fn parse_flag<T>(flag: &str, raw: &str) -> CliResult<T>
where
    T: std::str::FromStr<Err = glmprog::Error>,
{
    raw.parse().map_err(|e| usage(format!("--{flag}: {e}")))
}

pub fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| usage(format!("the argument --{flag} is required")))
}

pub fn require_file(path: &Path, flag: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("--{flag}: cannot read {}", path.display())))
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
pub fn print_stdout(text: &str) -> CliResult<()> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Prints a CSV result; with `out`, also writes it and a sidecar manifest.
pub fn emit_csv(text: &str, out: Option<&Path>, resolved: &serde_json::Value) -> CliResult<()> {
    print_stdout(text)?;
    if let Some(out) = out {
        std::fs::write(out, text).with_context(|| format!("cannot write {}", out.display()))?;
        manifest::write(&manifest::sidecar(out), resolved, &[out.to_path_buf()])?;
    }
    Ok(())
}

pub fn fmt_opt(v: Option<impl std::fmt::Display>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (name, result) = match cli.command {
        Command::Analyze(a) => ("analyze", analyze::run(a)),
        Command::Power(a) => ("power", power::run(a)),
        Command::Train(a) => ("train", train::run(a)),
        Command::Simulate(a) => ("simulate", simulate::run(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nUsage: glmprog {name} [OPTIONS]\n\nFor more information, try 'glmprog {name} --help'.");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
