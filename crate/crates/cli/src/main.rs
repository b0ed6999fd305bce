//! `hlv`: command-line front end for the hlv-core analyses.
//!
//! Exit codes: 0 success, 2 negative or infeasible certification, 1 error.
//! Every run writes `manifest.json` next to its outputs.

mod args;
mod commands;
mod config;
mod output;
mod svg;

use std::path::{Path, PathBuf};

use clap::Parser;

use args::Cli;
use commands::Ctx;
use output::{Manifest, Output, SeedEcho};

const DEFAULT_SEED: u64 = 42;
const SEED_ENV: &str = "HLV_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hlv_core::HlvError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed input {path}: {message}")]
    Input { path: String, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<SeedEcho, CliError> {
    if let Some(value) = flag {
        return Ok(SeedEcho { value, source: "flag" });
    }
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(|value| SeedEcho { value, source: "env" })
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(SeedEcho { value: DEFAULT_SEED, source: "default" }),
    }
}

fn command_name(cli: &Cli) -> String {
    use args::{Command::*, EnsembleCommand, StarCommand};
    match &cli.command {
        Check(_) => "check".into(),
        Simulate(_) => "simulate".into(),
        Canonical(_) => "canonical".into(),
        Star(c) => format!("star {}", match c {
            StarCommand::Classify(_) => "classify",
            StarCommand::Period(_) => "period",
            StarCommand::Profile(_) => "profile",
        }),
        Average(_) => "average".into(),
        Resonance(_) => "resonance".into(),
        Ensemble(c) => format!("ensemble {}", match c {
            EnsembleCommand::Census(_) => "census",
            EnsembleCommand::Curves(_) => "curves",
            EnsembleCommand::Theorem2(_) => "theorem2",
            EnsembleCommand::Theorem3(_) => "theorem3",
        }),
        Netgen(_) => "netgen".into(),
    }
}

fn execute(cli: &Cli, argv: &[String]) -> Result<i32, CliError> {
    let seed = resolve_seed(cli.global.seed)?;
    let out = Output::create(&cli.global.out, cli.global.format)?;
    let mut ctx = Ctx { global: &cli.global, seed: seed.value, out, input: None };
    let status = commands::run(&mut ctx, &cli.command)?;
    let config = serde_json::to_value(cli)?;
    let name = command_name(cli);
    let Ctx { mut out, input, .. } = ctx;
    let records = std::mem::take(&mut out.files);
    let manifest = Manifest {
        tool: "hlv",
        version: env!("CARGO_PKG_VERSION"),
        core_version: hlv_core::VERSION,
        command: &name,
        argv: &argv[1..],
        seed: &seed,
        input: input.as_ref(),
        config: &config,
        exit_code: status.code,
        outputs: &records,
    };
    let files = records.len();
    out.finish(&manifest)?;
    println!("{name}: {}", status.summary);
    println!("wrote {files} file(s) and manifest.json to {}", cli.global.out.display());
    Ok(status.code)
}

fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, &argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn main() {
    std::process::exit(run(std::env::args().collect()));
}
