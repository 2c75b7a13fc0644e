//! Command-line front end: training, exact references, densities and self-checks.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spinvmc::runner::{self, checks, RunConfig, TrainOptions};
use spinvmc::VmcError;

/// Prints a line, treating a closed stdout (as under `head`) as the end of output.
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

/// Worker threads for sampling and local energies; unset means one per core.
const THREADS_ENV: &str = "SPINVMC_THREADS";

#[derive(Parser)]
#[command(
    name = "spinvmc",
    version,
    about = "Neural-network VMC for 2D spinful fermions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Replaces the `seed` key of the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the `out_dir` key of the config file.
    #[arg(long)]
    out_dir: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the wavefunction described by a config file.
    Train {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Allow the honeycomb moiré workflow.
        #[arg(long)]
        long_run: bool,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Exact ground-state energy of a noninteracting system.
    Reference { config: PathBuf },
    /// Spin density sampled from a checkpoint.
    Density {
        checkpoint: PathBuf,
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the numerical self-checks.
    Check,
}

fn exit_code(e: &VmcError) -> u8 {
    match e {
        VmcError::Config(_) | VmcError::Unsupported(_) => 2,
        VmcError::Numerical(_) | VmcError::DegenerateAmplitude => 3,
        VmcError::Dimension(_) | VmcError::Checkpoint(_) | VmcError::Io(_) => 1,
    }
}

fn load(path: &PathBuf, overrides: Option<&Overrides>) -> Result<RunConfig, VmcError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(o) = overrides {
        if let Some(seed) = o.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &o.out_dir {
            cfg.out_dir = dir.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode, VmcError> {
    match cli.command {
        Command::Train {
            config,
            overrides,
            long_run,
            resume,
        } => {
            let cfg = load(&config, Some(&overrides))?;
            let summary = runner::train(&cfg, &TrainOptions { long_run, resume })?;
            if let Some(last) = summary.log.last() {
                let ma = runner::report_moving_average(&summary.log, cfg.moving_average_window);
                say!(
                    "step {}: E = {:.8} ± {:.8} (moving average {:.8} over {})",
                    last.step,
                    last.energy_mean,
                    last.energy_stderr,
                    ma.last().copied().unwrap_or(f64::NAN),
                    cfg.moving_average_window
                );
            }
            if summary.aborted_steps > 0 {
                say!("{} aborted steps were resampled", summary.aborted_steps);
            }
            say!("artifacts in {}", summary.out_dir.display());
        }
        Command::Reference { config } => {
            let cfg = load(&config, None)?;
            let report = runner::reference(&cfg)?;
            say!("energy {:.12}", report.energy);
            for (i, e) in report.levels.iter().enumerate() {
                say!("level {i} {e:.12}");
            }
            for (cutoff, e) in &report.cutoff_energies {
                say!("cutoff {cutoff} {e:.12}");
            }
        }
        Command::Density {
            checkpoint,
            config,
            overrides,
        } => {
            let cfg = load(&config, Some(&overrides))?;
            let grid = runner::density_from_checkpoint(&checkpoint, &cfg)?;
            say!(
                "{} samples on a {r}x{r} grid written to {}",
                grid.samples(),
                PathBuf::from(&cfg.out_dir)
                    .join(runner::DENSITY_FILE)
                    .display(),
                r = grid.resolution(),
            );
        }
        Command::Check => {
            let outcomes = checks::run_checks();
            for c in &outcomes {
                say!(
                    "[{}] {}: {}",
                    if c.passed { "pass" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            if outcomes.iter().any(|c| !c.passed) {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                {
                    log::warn!("could not size the thread pool: {e}");
                }
            }
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
