//! Command-line driver: simulate markets, build measurement panels, filter, estimate.

mod commands;
mod config;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "ccfilter", version, about = "Option-implied CCF filtering and QML estimation of affine jump-diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed for simulation commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Simulate paths and a noisy option market.
    Simulate,
    /// Quotes to measurement panel.
    Prep,
    /// Filter the latent state at fixed parameters.
    Filter,
    /// QML estimation with sandwich standard errors.
    Estimate,
    /// Replication study on simulated markets.
    Montecarlo,
    /// COS prices of OTM options.
    Price,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.simulation.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.output = Some(o);
    }
    cfg.validate()?;
    let name = format!("{:?}", cli.command).to_lowercase();
    cfg.check_inputs(&name)?;
    let out = cfg.output.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let out = out.canonicalize()?;
    cfg.output = Some(out.clone());
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    std::fs::write(out.join("effective_config.toml"), cfg.to_toml()?)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, &out),
        Command::Prep => commands::prep(&cfg, &out),
        Command::Filter => commands::filter(&cfg, &out),
        Command::Estimate => commands::estimate(&cfg, &out),
        Command::Montecarlo => commands::montecarlo(&cfg, &out),
        Command::Price => commands::price(&cfg, &out),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
