//! Batch driver: loads an instance, sweeps bounds over the codebook size and
//! writes a CSV plus a summary JSON.

mod commands;
pub mod config;
pub mod error;
pub mod instance;
pub mod output;

use std::path::PathBuf;

use serde::Serialize;
use serde_json::Value;

pub use config::{parse_grid, parse_m_codewords, Command, ExampleParams, RunConfig};
pub use error::{CliError, CliResult};
pub use instance::InstanceSpec;

/// What a run wrote. `config` is the resolved config (instance inlined), so
/// the summary file can be fed back as `--config`.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config: RunConfig,
    pub csv: PathBuf,
    pub rows: usize,
    pub results: Value,
}

/// Validates, computes, and writes the CSV next to its summary.
pub fn run(config: RunConfig) -> CliResult<Summary> {
    config.validate()?;
    let config = config.resolve()?;
    let outcome = commands::execute(&config)?;
    output::emit_csv(&outcome.curves, &config.out)?;
    let summary = Summary {
        rows: outcome.curves.iter().map(|c| c.points.len()).sum(),
        csv: config.out.clone(),
        results: outcome.results,
        config,
    };
    output::write_json(&summary, &output::summary_path(&summary.csv))?;
    Ok(summary)
}
