use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use p2p_der_cli::config::RunConfig;
use p2p_der_cli::grid::{parse_p_grid, parse_t_grid};
use p2p_der_cli::pipeline::Run;

/// Peer-to-peer rental market for residential PV-plus-storage.
#[derive(Parser, Debug)]
#[command(name = "p2p-der", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML run configuration; defaults apply for anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory for data, outputs and manifest.json.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides synth.rng_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "P2PDER_THREADS")]
    threads: Option<usize>,
    /// Bill each household on this many representative days and scale to the
    /// full period (0 = every day).
    #[arg(long, global = true)]
    days: Option<usize>,
    /// Recompute stages even when their inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Args, Debug)]
struct Prices {
    /// Asset prices in $/yr/kW: `a,b,c` or `start:stop:count`.
    #[arg(long, conflicts_with = "price")]
    p_grid: Option<String>,
    /// A single asset price in $/yr/kW.
    #[arg(long)]
    price: Option<f64>,
}

impl Prices {
    fn resolve(&self) -> Result<Option<Vec<f64>>> {
        if let Some(p) = self.price {
            return parse_p_grid(&p.to_string()).map(Some);
        }
        self.p_grid.as_deref().map(parse_p_grid).transpose()
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scenario into <out>/data.
    GenData,
    /// Screen a data directory and write exclusions.csv.
    Validate {
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Sample annual bills with the dispatch LP and fit savings curves.
    Fit,
    /// Clear the market along the adoption order.
    Sweep {
        /// Adoption rates: a point count, `a,b,c` or `start:stop:count`.
        #[arg(long)]
        t_grid: Option<String>,
    },
    /// Clear the market at one adoption rate.
    Clear {
        #[arg(long)]
        t: f64,
    },
    /// Long-run adoption with the rental market.
    Longrun(Prices),
    /// Direct subsidy that would match the market's adoption increase.
    Subsidy(Prices),
    /// Vendor gains, utility losses and the emergence threshold.
    Stakeholders(Prices),
    /// Share of rental volume cleared within regions.
    Localness {
        #[arg(long)]
        t_grid: Option<String>,
    },
    /// Every stage in order.
    Run,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("starting thread pool")?;
    }
    let mut config = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        config.synth.rng_seed = seed;
    }
    if let Some(days) = g.days {
        config.days = days;
    }
    let mut run = Run::new(config, &g.out)?;
    run.force = g.force;
    match cli.command {
        Command::GenData => run.gen_data(),
        Command::Validate { input } => {
            let dir = input.unwrap_or_else(|| run.data_dir());
            run.validate_data(&dir).map(|_| ())
        }
        Command::Fit => run.fit(),
        Command::Sweep { t_grid } => run.sweep(t_grid.as_deref().map(parse_t_grid).transpose()?),
        Command::Clear { t } => run.clear(t),
        Command::Longrun(p) => run.longrun(p.resolve()?),
        Command::Subsidy(p) => run.subsidy(p.resolve()?),
        Command::Stakeholders(p) => run.stakeholders(p.resolve()?),
        Command::Localness { t_grid } => run.localness(t_grid.as_deref().map(parse_t_grid).transpose()?),
        Command::Run => run.run_all(),
    }
}
