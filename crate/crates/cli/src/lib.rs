//! Command-line front end for the `privmap` library.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use privmap::DistortionBudget;

pub use commands::{Overrides, Report};
pub use config::{ExperimentConfig, LoadedConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "privmap", version, about = "Optimal privacy-preserving noise for quantized linear Gaussian systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the lifted window Gaussian (mean and covariance) as CSV.
    Lift {
        #[command(flatten)]
        common: Common,
        /// Window start; defaults to the first of `k_range`.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Solve the first window for every budget.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Solve every window of `k_range` and optionally simulate.
    Receding {
        #[command(flatten)]
        common: Common,
    },
    /// Produce the full reactor case-study bundle.
    ReproduceReactor {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (JSON). Optional for `reproduce-reactor`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated budgets, e.g. `inf,7,2`.
    #[arg(long, value_delimiter = ',')]
    pub epsilon: Option<Vec<DistortionBudget>>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Neither read nor write the window cache.
    #[arg(long)]
    pub no_cache: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            epsilons: self.epsilon.clone(),
            no_cache: self.no_cache,
        }
    }

    fn load(&self, default_reactor: bool) -> Result<LoadedConfig, CliError> {
        match (&self.config, default_reactor) {
            (Some(p), _) => LoadedConfig::from_path(p),
            (None, true) => Ok(LoadedConfig::reactor()),
            (None, false) => Err(CliError::Config("--config is required".into())),
        }
    }
}

pub fn execute(command: &Command) -> Result<Report, CliError> {
    let (common, reactor) = match command {
        Command::Lift { common, .. } | Command::Solve { common } | Command::Receding { common } => {
            (common, false)
        }
        Command::ReproduceReactor { common } => (common, true),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;
    let loaded = common.load(reactor)?;
    let ov = common.overrides();
    pool.install(|| match command {
        Command::Lift { k, .. } => commands::lift(&loaded, &ov, *k),
        Command::Solve { .. } => commands::solve(&loaded, &ov),
        Command::Receding { .. } => commands::receding(&loaded, &ov),
        Command::ReproduceReactor { .. } => commands::reproduce(&loaded, &ov),
    })
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(report) => {
            for f in &report.files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("privmap: {e}");
            e.exit_code()
        }
    }
}
