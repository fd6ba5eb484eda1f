//! Batch front door: `regime-iter <command> --config <path> [--out <dir>]
//! [--seed <u64>] [--threads <n>]`.
//!
//! Commands: validate | solve | bounds | oracle | report. Exit codes:
//! 0 success, 1 configuration error, 2 runtime numeric error.

use std::path::PathBuf;
use std::process::ExitCode;

mod config;
mod csvout;
mod expr;
mod pipeline;

use config::{RawConfig, RunConfig};
use pipeline::Command;

/// Errors split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: the configuration (or command line) is unusable; the message
    /// names the offending key.
    Config(String),
    /// Exit 2: a numeric or I/O failure at run time.
    Runtime(String),
}

impl From<regime_iter_core::Error> for CliError {
    fn from(e: regime_iter_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

struct Args {
    command: Command,
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
}

const USAGE: &str = "usage: regime-iter <validate|solve|bounds|oracle|report> \
                     --config <path> [--out <dir>] [--seed <u64>] [--threads <n>]";

fn parse_args() -> Result<Args, CliError> {
    let mut argv = std::env::args().skip(1);
    let command = argv
        .next()
        .and_then(|name| Command::parse(&name))
        .ok_or_else(|| CliError::Config(USAGE.to_string()))?;
    let mut config = None;
    let mut out = None;
    let mut seed = None;
    let mut threads = None;
    while let Some(flag) = argv.next() {
        let mut value = |name: &str| {
            argv.next()
                .ok_or_else(|| CliError::Config(format!("{name} needs a value\n{USAGE}")))
        };
        match flag.as_str() {
            "--config" => config = Some(PathBuf::from(value("--config")?)),
            "--out" => out = Some(PathBuf::from(value("--out")?)),
            "--seed" => {
                seed = Some(value("--seed")?.parse::<u64>().map_err(|_| {
                    CliError::Config("--seed expects an unsigned 64-bit integer".to_string())
                })?)
            }
            "--threads" => {
                threads = Some(value("--threads")?.parse::<usize>().map_err(|_| {
                    CliError::Config("--threads expects a positive integer".to_string())
                })?)
            }
            other => {
                return Err(CliError::Config(format!("unknown flag '{other}'\n{USAGE}")));
            }
        }
    }
    let config = config.ok_or_else(|| CliError::Config(format!("--config is required\n{USAGE}")))?;
    Ok(Args {
        command,
        config,
        out,
        seed,
        threads,
    })
}

fn run() -> Result<(), CliError> {
    let args = parse_args()?;

    let threads = args.threads.or_else(|| {
        std::env::var("REGIME_ITER_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
    });
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("cannot size the thread pool: {e}")))?;
    }

    let raw_text = std::fs::read_to_string(&args.config).map_err(|e| {
        CliError::Config(format!("cannot read config {}: {e}", args.config.display()))
    })?;
    let raw = RawConfig::parse(&raw_text)?;
    let mut cfg = RunConfig::from_raw(&raw)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out_dir = args.out.unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    pipeline::run_command(args.command, &cfg, &out_dir)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            ExitCode::from(2)
        }
    }
}
