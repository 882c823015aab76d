use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use excess_cli::{output, parse_grid, parse_m_codewords, run, CliError, Command, RunConfig};

#[derive(Parser)]
#[command(name = "excess-bounds", version, about = "Bounds on the excess-distortion probability of single-shot codes")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Rate-distortion functions and achievers.
    Rd(Common),
    /// Achievability bounds over M.
    Ach(Common),
    /// Converse bounds over M.
    Conv(Common),
    /// Exhaustive optimum over M.
    Oracle(Common),
    /// Monte Carlo runs of the random-code constructions.
    Simulate(Common),
    /// Binomial class example with log-loss reconstruction.
    Example(ExampleArgs),
}

/// A whole list given as one argument.
#[derive(Clone)]
struct List<T>(Vec<T>);

#[derive(Args)]
struct Common {
    /// JSON run config (a previous summary also works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON instance file.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// CSV output path; the summary goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Codebook sizes: `A..B` or a comma-separated list.
    #[arg(long = "m-codewords", value_parser = |s: &str| parse_m_codewords(s).map(List))]
    m_codewords: Option<List<usize>>,
    /// Comma-separated γ values (bits).
    #[arg(long = "gamma-grid", value_parser = |s: &str| parse_grid(s).map(List))]
    gamma_grid: Option<List<f64>>,
    /// Comma-separated ε' values.
    #[arg(long = "eps-prime-grid", value_parser = |s: &str| parse_grid(s).map(List))]
    eps_prime_grid: Option<List<f64>>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on the exhaustive search size.
    #[arg(long)]
    budget: Option<f64>,
    /// Solve the converse inf-sup exactly as a linear program.
    #[arg(long = "exact-lp")]
    exact_lp: bool,
}

#[derive(Args)]
struct ExampleArgs {
    #[command(flatten)]
    common: Common,
    /// Number of classes.
    #[arg(long)]
    m: Option<usize>,
    /// Binomial trials per class.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    d1: Option<f64>,
    #[arg(long)]
    d2: Option<f64>,
}

fn build(command: Command, c: Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            if cfg.command != command {
                return Err(CliError::config(format!(
                    "config is for `{}`, not `{}`",
                    cfg.command.as_str(),
                    command.as_str()
                )));
            }
            cfg
        }
        None => {
            let out = c
                .out
                .clone()
                .ok_or_else(|| CliError::config("--out is required without --config"))?;
            RunConfig::new(command, out)
        }
    };
    if let Some(out) = c.out {
        cfg.out = out;
    }
    if let Some(path) = c.instance {
        cfg.instance = None;
        cfg.instance_path = Some(path);
    }
    if let Some(List(ms)) = c.m_codewords {
        cfg.m_codewords = ms;
    }
    if let Some(List(g)) = c.gamma_grid {
        cfg.gamma_grid = Some(g);
    }
    if let Some(List(g)) = c.eps_prime_grid {
        cfg.eps_prime_grid = Some(g);
    }
    if c.trials.is_some() {
        cfg.trials = c.trials;
    }
    if c.seed.is_some() {
        cfg.seed = c.seed;
    }
    if let Some(b) = c.budget {
        cfg.budget = b;
    }
    cfg.exact_lp |= c.exact_lp;
    Ok(cfg)
}

fn config_from(sub: Sub) -> Result<RunConfig, CliError> {
    match sub {
        Sub::Rd(c) => build(Command::Rd, c),
        Sub::Ach(c) => build(Command::Ach, c),
        Sub::Conv(c) => build(Command::Conv, c),
        Sub::Oracle(c) => build(Command::Oracle, c),
        Sub::Simulate(c) => build(Command::Simulate, c),
        Sub::Example(a) => {
            let mut cfg = build(Command::Example, a.common)?;
            let mut ex = cfg.example.unwrap_or_default();
            ex.m = a.m.unwrap_or(ex.m);
            ex.n = a.n.unwrap_or(ex.n);
            ex.p = a.p.unwrap_or(ex.p);
            ex.d1 = a.d1.unwrap_or(ex.d1);
            ex.d2 = a.d2.unwrap_or(ex.d2);
            cfg.example = Some(ex);
            Ok(cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match config_from(cli.command).and_then(run) {
        Ok(summary) => {
            println!(
                "wrote {} rows to {} (summary: {})",
                summary.rows,
                summary.csv.display(),
                output::summary_path(&summary.csv).display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
