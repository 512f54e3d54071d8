//! Command-line front end: config ingestion, one subcommand per workflow,
//! CSV outputs and a JSON run manifest.
//!
//! Exit codes: 0 success, 2 invalid config, 3 truncation breach,
//! 4 non-convergence, 1 anything else. Failures print a JSON object on
//! stderr.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use blockade_core::{Error, ErrorCategory, Result};
use clap::Parser;
use serde_json::json;

use crate::commands::{execute, Command, Invocation};
use crate::config::Config;

#[derive(Debug, Parser)]
#[command(name = "blockade", version, about = "Photon-blockade breakdown simulator")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// JSON config, or a manifest from an earlier run.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// Named parameter set.
    #[arg(long)]
    pub preset: Option<String>,
    /// Master seed; overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for trajectory ensembles.
    #[arg(long, env = "BLOCKADE_THREADS")]
    pub threads: Option<usize>,
}

pub fn exit_code(cat: ErrorCategory) -> i32 {
    match cat {
        ErrorCategory::InvalidConfig => 2,
        ErrorCategory::Truncation => 3,
        ErrorCategory::NonConvergence => 4,
        ErrorCategory::Other => 1,
    }
}

fn category_name(cat: ErrorCategory) -> &'static str {
    match cat {
        ErrorCategory::InvalidConfig => "invalid_config",
        ErrorCategory::Truncation => "truncation",
        ErrorCategory::NonConvergence => "non_convergence",
        ErrorCategory::Other => "other",
    }
}

/// Reads a config file. A manifest is accepted too; its `config` block is used.
pub fn load_config(path: &std::path::Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(&text) {
        if map.contains_key("tool") {
            let block = map.get("config").cloned().ok_or_else(|| Error::InvalidInput("manifest has no config block".into()))?;
            return serde_json::from_value(block).map_err(|e| Error::InvalidInput(format!("manifest config: {e}")));
        }
    }
    config::parse(&text)
}

pub fn run(cli: Cli) -> Result<PathBuf> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    let config = match (&cli.config, &cli.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => Config::from_preset(name)?,
        (None, None) => return Err(Error::InvalidInput("either --config or --preset is required".into())),
    };
    let seed = cli.seed.or(config.run.seed).unwrap_or_else(|| {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0)
    });
    execute(Invocation { command: cli.command, config, preset: cli.preset, seed, out: &cli.out })
}

/// Runs the parsed command line and returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    match run(cli) {
        Ok(_) => 0,
        Err(e) => {
            let cat = e.category();
            let body = json!({
                "error": {
                    "category": category_name(cat),
                    "exit_code": exit_code(cat),
                    "message": e.to_string(),
                }
            });
            eprintln!("{body}");
            exit_code(cat)
        }
    }
}
