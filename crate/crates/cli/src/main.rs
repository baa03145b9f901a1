use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use d2g_cli::commands::{self, Ctx, Experiment};
use d2g_cli::config::{PredictMethod, RunConfig};
use d2g_cli::{CliError, Result};

/// Laplace and variational posteriors for small MLPs, read as linear
/// models and Gaussian processes.
#[derive(Parser)]
#[command(name = "d2g", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for predict, kernel and sweep.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the network and write params.json.
    Train(Common),
    /// Build the Gaussian posterior from trained weights.
    Posterior(Common),
    /// Predictive mean and variances over the configured grid.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<PredictMethod>,
        /// Monte-Carlo sample count.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// NTK-style kernel on the training inputs, grouped by class.
    Kernel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        summarized: bool,
        #[arg(long)]
        subsample: Option<usize>,
    },
    /// Log marginal likelihood of the linearized model.
    Evidence(Common),
    /// Hyperparameter sweep scored by evidence and test error.
    Sweep(Common),
    /// Check the numerical identities against independent oracles.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fewer trials per check.
        #[arg(long)]
        quick: bool,
        /// Also write verify.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one of the packaged experiments.
    Experiment {
        #[arg(value_enum)]
        which: Experiment,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Consecutive seeds for the per-seed experiments.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn context(c: &Common) -> Result<Ctx> {
    if c.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let out = cfg.out_dir(c.out.as_deref());
    Ok(Ctx { cfg, out, jobs: c.jobs })
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => report(&commands::train(&context(&c)?)?),
        Command::Posterior(c) => report(&commands::posterior(&context(&c)?)?),
        Command::Predict { common, method, samples } => {
            report(&commands::predict_grid(&context(&common)?, method, samples)?)
        }
        Command::Kernel {
            common,
            summarized,
            subsample,
        } => report(&commands::kernel(&context(&common)?, summarized.then_some(true), subsample)?),
        Command::Evidence(c) => {
            let (paths, log_ml) = commands::evidence(&context(&c)?)?;
            log::info!("log marginal likelihood {log_ml}");
            report(&paths);
        }
        Command::Sweep(c) => report(&commands::sweep(&context(&c)?)?),
        Command::Verify { seed, quick, out } => println!("{}", commands::verify(seed, quick, out.as_deref())?),
        Command::Experiment {
            which,
            seed,
            seeds,
            jobs,
            out,
        } => {
            if seeds == 0 || jobs == 0 {
                return Err(CliError::Usage("--seeds and --jobs must be at least 1".into()));
            }
            report(&[commands::experiment(which, seed, seeds, jobs, Path::new(&out))?]);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
