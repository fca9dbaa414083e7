//! Command-line driver: configuration, artifact writing and the `ntklab`
//! subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;
pub mod svg;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, CliResult};

/// Environment variable that overrides `--threads`.
pub const THREADS_ENV: &str = "NTKLAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "ntklab",
    version,
    about = "Gradient descent dynamics of wide shallow ReLU networks"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML config file; `train` also accepts a previous run's manifest.json.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "ntklab-out")]
    pub out: PathBuf,
    /// Base seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps (NTKLAB_THREADS takes precedence).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network and write its trajectory.
    Train,
    /// Width sweep of the synthetic experiment with trend checks.
    Figure1 {
        /// Comma-separated widths.
        #[arg(long, value_delimiter = ',')]
        widths: Option<Vec<usize>>,
        /// Number of initialization seeds.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Series, feature-map and finite-width agreement of the kernel.
    KernelCheck {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Lower and upper bounds on the smallest eigenvalue of H.
    EigBounds {
        /// Headerless CSV with one input per row; synthesized when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
    },
    /// Test error against sample size for a polynomial target.
    Generalize {
        /// Target degree p in y = (x·β)^p.
        #[arg(long)]
        p: Option<u32>,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        /// Standardize labels.
        #[arg(long)]
        normalize: bool,
    },
}

/// Thread count from the environment, the flag, or the config, in that order.
fn resolve_threads(flag: Option<usize>, from_config: Option<usize>) -> CliResult<Option<usize>> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n = v.trim().parse::<usize>().map_err(|_| {
            CliError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))
        })?;
        return Ok(Some(n));
    }
    Ok(flag.or(from_config))
}

pub fn run(cli: Cli) -> CliResult<()> {
    let ctx = commands::Context {
        config: cli.common.config.clone(),
        out: cli.common.out.clone(),
        seed: cli.common.seed,
        started: Instant::now(),
    };
    let config_threads = match &ctx.config {
        Some(p) if !commands::is_json(p) => ctx.load_config()?.threads,
        _ => None,
    };
    if let Some(n) = resolve_threads(cli.common.threads, config_threads)? {
        if n == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        // A pool may already exist when run() is called twice in one process.
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::debug!("keeping existing thread pool: {e}");
        }
    }
    match &cli.command {
        Command::Train => commands::train::run(&ctx),
        Command::Figure1 { widths, seeds } => commands::figure1::run(
            &ctx,
            &commands::figure1::Overrides {
                widths: widths.clone(),
                seeds: *seeds,
            },
        ),
        Command::KernelCheck { d, trials } => commands::kernel_check::run(
            &ctx,
            &commands::kernel_check::Overrides {
                d: *d,
                trials: *trials,
            },
        ),
        Command::EigBounds { dataset, n, d } => commands::eig_bounds::run(
            &ctx,
            &commands::eig_bounds::Overrides {
                dataset: dataset.clone(),
                n: *n,
                d: *d,
            },
        ),
        Command::Generalize {
            p,
            ns,
            seeds,
            width,
            normalize,
        } => commands::generalize::run(
            &ctx,
            &commands::generalize::Overrides {
                degree: *p,
                sample_sizes: ns.clone(),
                seeds: *seeds,
                width: *width,
                normalize: *normalize,
            },
        ),
    }
}
