//! Run configuration: what to compute, on which instance, over which `M`.

use std::path::{Path, PathBuf};

use excess_bounds::oracle::DEFAULT_BUDGET;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::instance::InstanceSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Rd,
    Ach,
    Conv,
    Oracle,
    Simulate,
    Example,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Rd => "rd",
            Command::Ach => "ach",
            Command::Conv => "conv",
            Command::Oracle => "oracle",
            Command::Simulate => "simulate",
            Command::Example => "example",
        }
    }

    fn needs_instance(self) -> bool {
        !matches!(self, Command::Example)
    }
}

/// Binomial class source with Hamming inference and log-loss reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleParams {
    pub m: usize,
    pub n: usize,
    pub p: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Default for ExampleParams {
    fn default() -> Self {
        Self {
            m: 10,
            n: 6,
            p: 0.1,
            d1: 6.0,
            d2: 0.5,
        }
    }
}

fn default_budget() -> f64 {
    DEFAULT_BUDGET
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_path: Option<PathBuf>,
    #[serde(default)]
    pub m_codewords: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_prime_grid: Option<Vec<f64>>,
    /// Extra output distributions tried by the achievability sweeps: over
    /// `X̂ × Ŷ` for the general bound, over `Ŷ` otherwise.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_budget")]
    pub budget: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub exact_lp: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<ExampleParams>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn new(command: Command, out: impl Into<PathBuf>) -> Self {
        Self {
            command,
            instance: None,
            instance_path: None,
            m_codewords: Vec::new(),
            gamma_grid: None,
            eps_prime_grid: None,
            candidates: Vec::new(),
            trials: None,
            seed: None,
            budget: DEFAULT_BUDGET,
            exact_lp: false,
            example: None,
            out: out.into(),
        }
    }

    /// Reads a config file. A summary written by a previous run is accepted
    /// as well and yields the config it echoes.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if value.get("command").is_none() {
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
        }
        serde_json::from_value(value)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Replaces `instance_path` by the instance it points to.
    pub fn resolve(mut self) -> CliResult<Self> {
        if let Some(path) = self.instance_path.take() {
            if self.instance.is_some() {
                return Err(CliError::config("give either an inline instance or an instance path, not both"));
            }
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let spec = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            self.instance = Some(spec);
        }
        Ok(self)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.command.needs_instance() && self.instance.is_none() && self.instance_path.is_none() {
            return Err(CliError::config(format!(
                "`{}` needs an instance (--instance PATH or \"instance\" in the config)",
                self.command.as_str()
            )));
        }
        if self.command != Command::Rd && self.m_codewords.is_empty() {
            return Err(CliError::config("the list of codebook sizes M is empty"));
        }
        if self.m_codewords.iter().any(|&m| m == 0) {
            return Err(CliError::config("codebook sizes M must be >= 1"));
        }
        for (name, grid) in [("gamma", &self.gamma_grid), ("epsilon'", &self.eps_prime_grid)] {
            if let Some(g) = grid {
                if g.is_empty() {
                    return Err(CliError::config(format!("{name} grid is empty")));
                }
                if g.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(CliError::config(format!("{name} grid values must be finite and >= 0")));
                }
            }
        }
        if let Some(g) = &self.eps_prime_grid {
            if g.iter().any(|v| *v > 1.0) {
                return Err(CliError::config("epsilon' grid values must lie in [0, 1]"));
            }
        }
        if !(self.budget > 0.0) {
            return Err(CliError::config("enumeration budget must be positive"));
        }
        if self.command == Command::Simulate {
            if self.seed.is_none() {
                return Err(CliError::config("simulation needs an explicit --seed"));
            }
            match self.trials {
                None => return Err(CliError::config("simulation needs --trials")),
                Some(0) => return Err(CliError::config("--trials must be >= 1")),
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// `A..B` (inclusive), `A..=B`, or a comma-separated list.
pub fn parse_m_codewords(text: &str) -> Result<Vec<usize>, String> {
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let lo: usize = a.trim().parse().map_err(|_| format!("bad range start {a:?}"))?;
        let hi: usize = b.trim().parse().map_err(|_| format!("bad range end {b:?}"))?;
        if lo == 0 {
            return Err("codebook sizes start at 1".into());
        }
        if hi < lo {
            return Err(format!("empty range {text}"));
        }
        return Ok((lo..=hi).collect());
    }
    let out: Vec<usize> = text
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| format!("bad codebook size {t:?}")))
        .collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err("empty list of codebook sizes".into());
    }
    if out.contains(&0) {
        return Err("codebook sizes start at 1".into());
    }
    Ok(out)
}

/// Comma-separated list of nonnegative numbers.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, String> {
    let out: Vec<f64> = text
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().map_err(|_| format!("bad grid value {t:?}")))
        .collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err("empty grid".into());
    }
    if out.iter().any(|v: &f64| !v.is_finite() || *v < 0.0) {
        return Err("grid values must be finite and >= 0".into());
    }
    Ok(out)
}
