//! The `dbmt` command line: each subcommand reads a [`RunConfig`], runs one
//! experiment and writes CSV/JSON artifacts plus `resolved_config.toml` into
//! the output directory.

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::RunConfig;

/// Version tag written into every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(#[from] dbmt_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn config_from(e: dbmt_core::Error) -> Self {
        CliError::Config(e.to_string())
    }

    /// 1 for I/O failures, 2 for bad configuration, 3 for numerical aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dbmt",
    version,
    about = "Bridge mixture and time-reversal transports for linear SDEs"
)]
pub struct Cli {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `sampler.seed` and `training.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `outputs.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for path simulation (all cores when omitted).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Toy transport between {-2, 0, 2} under the independent and identity
    /// couplings: transition_matrix.json, marginal_density_grid.csv,
    /// sample_paths.csv.
    Toy,
    /// Per-step weights, denoised estimates and states of exact-drift paths
    /// for each Euler step count in `inspect.sweep` (rings data by default):
    /// weights.csv, denoised.csv, states.csv, inspect_summary.json.
    InspectWeights,
    /// Fits the regressor: model.ckpt, loss_curve.csv, train_report.json.
    Train,
    /// Simulates the transport with the exact or a checkpointed drift:
    /// sample_paths.csv, terminals.csv, sample_report.json.
    Sample,
    /// Gaussian field samples (white noise, plane embedding, torus) and
    /// per-sample timings: gp_<flavor>.csv (one grid row per line, W * C
    /// values, channel-last), gp_report.json, timing.json.
    Gp,
    /// Empirical semivariograms and exponential/RBF fits: fit_report.json,
    /// variogram_points.csv, variogram_curves.csv. Input images are CSV
    /// files with one grid row per line holding W * C values, channel-last.
    Variogram,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Toy => "toy",
            Command::InspectWeights => "inspect-weights",
            Command::Train => "train",
            Command::Sample => "sample",
            Command::Gp => "gp",
            Command::Variogram => "variogram",
        }
    }
}

/// Reads the config, applies the command-line overrides and makes every
/// file path absolute, so the echoed config reproduces the run from any
/// working directory.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let (mut cfg, base) = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let base = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                _ => PathBuf::from("."),
            };
            (RunConfig::from_toml(&text)?, base)
        }
        None => (RunConfig::default(), PathBuf::from(".")),
    };
    let base = std::path::absolute(&base).map_err(|e| CliError::io(&base, e))?;
    cfg.make_paths_absolute(&base);
    if let Some(seed) = cli.seed {
        cfg.sampler.seed = seed;
        if let Some(t) = cfg.training.as_mut() {
            t.seed = seed;
        }
    }
    if let Some(out) = &cli.out {
        cfg.outputs.dir = std::path::absolute(out).map_err(|e| CliError::io(out, e))?;
    }
    cfg.apply_command_defaults(cli.command);
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    #[cfg(feature = "parallel")]
    if let Some(n) = cli.threads {
        // A second call in the same process keeps the first pool.
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads.is_some() {
        log::warn!("built without the `parallel` feature; --threads is ignored");
    }
    let cfg = resolve_config(cli)?;
    run_config(cli.command, &cfg)
}

/// Runs `command` with an already resolved config.
pub fn run_config(command: Command, cfg: &RunConfig) -> Result<(), CliError> {
    let out = &cfg.outputs.dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    output::write_text(&out.join("resolved_config.toml"), &cfg.to_toml())?;
    log::info!("{} -> {}", command.name(), out.display());
    match command {
        Command::Toy => commands::toy(cfg),
        Command::InspectWeights => commands::inspect_weights(cfg),
        Command::Train => commands::train(cfg),
        Command::Sample => commands::sample(cfg),
        Command::Gp => commands::gp(cfg),
        Command::Variogram => commands::variogram(cfg),
    }
}
