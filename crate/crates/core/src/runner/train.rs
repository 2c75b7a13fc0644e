//! The optimization loop: sample, estimate, precondition, update.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::checkpoint::Checkpoint;
use super::config::{HamiltonianName, RunConfig};
use super::density::SpinDensityGrid;
use super::log::{read_log, write_header, EnergyRecord};
use crate::ansatz::{init_params, NetworkParams};
use crate::error::{Result, VmcError};
use crate::mcmc::{adapt_sigma, ChainStats, ProposalParams, WalkerBatch};
use crate::models::Hamiltonian;
use crate::optimize::{apply_update, energy_and_gradient, lr_schedule, KfacState, Optimizer};

/// Consecutive aborted steps tolerated before a run is declared failed.
pub const MAX_CONSECUTIVE_ABORTS: usize = 10;

pub const LOG_FILE: &str = "energy.csv";
pub const DENSITY_FILE: &str = "density.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.toml";

/// Walker streams use a seed distinct from the parameter initialization.
fn walker_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(0xD1B5_4A32_D192_ED03)
}

/// One run held in memory.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: RunConfig,
    hamiltonian: Hamiltonian,
    params: NetworkParams,
    optimizer: Optimizer,
    batch: WalkerBatch,
    proposal: ProposalParams,
    step: u64,
    aborted: u64,
}

impl Trainer {
    /// Fresh parameters and walkers, equilibrated for `burn_in` steps with the
    /// proposal width adapted at every step.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let hamiltonian = Hamiltonian::new(config.hamiltonian_spec()?)?;
        let params = init_params(&config.geometry()?, config.seed)?;
        let optimizer = Optimizer::new(config.optimizer())?;
        let mut batch = WalkerBatch::random(
            &params,
            config.cell()?,
            config.batch_size,
            config.spin_init(),
            walker_seed(config.seed),
        )?;
        let mut proposal = config.proposal();
        for _ in 0..config.burn_in {
            let st = batch.step(&params, &proposal);
            proposal.sigma = adapt_sigma(proposal.sigma, st.coordinate_acceptance());
        }
        batch.reset_stats();
        Ok(Self {
            config,
            hamiltonian,
            params,
            optimizer,
            batch,
            proposal,
            step: 0,
            aborted: 0,
        })
    }

    /// Continues exactly where `ckpt` left off.
    pub fn from_checkpoint(config: RunConfig, ckpt: Checkpoint) -> Result<Self> {
        config.validate()?;
        if *ckpt.params.geometry() != config.geometry()? {
            return Err(VmcError::Config(
                "checkpoint geometry does not match the configuration".into(),
            ));
        }
        let hamiltonian = Hamiltonian::new(config.hamiltonian_spec()?)?;
        let mut optimizer = Optimizer::new(config.optimizer())?;
        if let Some((decay, blocks)) = ckpt.kfac {
            *optimizer.kfac_state_mut() = KfacState::with_blocks(decay, blocks);
        }
        let states = ckpt
            .walkers
            .into_iter()
            .map(|w| (w.config, w.rng))
            .collect();
        let batch = WalkerBatch::restore(&ckpt.params, states, ckpt.stats)?;
        let proposal = ProposalParams {
            sigma: ckpt.sigma,
            ..config.proposal()
        };
        Ok(Self {
            config,
            hamiltonian,
            params: ckpt.params,
            optimizer,
            batch,
            proposal,
            step: ckpt.step,
            aborted: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn batch(&self) -> &WalkerBatch {
        &self.batch
    }

    pub fn hamiltonian(&self) -> &Hamiltonian {
        &self.hamiltonian
    }

    pub fn sigma(&self) -> f64 {
        self.proposal.sigma
    }

    /// Optimizer steps completed.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Steps abandoned and retried so far.
    pub fn aborted_steps(&self) -> u64 {
        self.aborted
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            sigma: self.proposal.sigma,
            config_toml: self.config.to_toml(),
            params: self.params.clone(),
            kfac: self
                .optimizer
                .kfac_state()
                .blocks()
                .map(|b| (self.optimizer.kfac_state().decay(), b.to_vec())),
            walkers: Checkpoint::walker_states(&self.batch),
            stats: self.batch.stats(),
        }
    }

    fn sample(&mut self) -> ChainStats {
        let mut st = ChainStats::default();
        for _ in 0..self.config.steps_per_update {
            st.merge(&self.batch.step(&self.params, &self.proposal));
        }
        st
    }

    /// One optimizer step. A batch whose estimate or update fails numerically
    /// is discarded and resampled, up to [`MAX_CONSECUTIVE_ABORTS`] times.
    pub fn step(&mut self) -> Result<EnergyRecord> {
        let start = Instant::now();
        for _ in 0..MAX_CONSECUTIVE_ABORTS {
            let stats = self.sample();
            match self.try_update() {
                Ok((est, eta)) => {
                    let rec = EnergyRecord {
                        step: self.step,
                        energy_mean: est.energy_mean,
                        energy_stderr: est.energy_stderr,
                        variance: est.variance,
                        acceptance_coord: stats.coordinate_acceptance(),
                        acceptance_spin: stats.spin_acceptance(),
                        learning_rate: eta,
                        wall_ms: start.elapsed().as_secs_f64() * 1e3,
                    };
                    self.step += 1;
                    return Ok(rec);
                }
                Err(VmcError::Numerical(msg)) => {
                    self.aborted += 1;
                    log::warn!("step {} aborted, resampling: {msg}", self.step);
                }
                Err(e) => return Err(e),
            }
        }
        Err(VmcError::Numerical(format!(
            "{MAX_CONSECUTIVE_ABORTS} consecutive aborted steps at step {}",
            self.step
        )))
    }

    fn try_update(&mut self) -> Result<(crate::optimize::GradientEstimate, f64)> {
        let configs: Vec<_> = self.batch.configurations().cloned().collect();
        let (est, samples) = energy_and_gradient(
            &self.params,
            &self.hamiltonian,
            &configs,
            self.config.rho,
            self.optimizer.retain(),
        )?;
        let eta = lr_schedule(self.config.eta0, self.config.t0, self.step);
        let dir = self
            .optimizer
            .direction(&self.params, &est, &samples, eta)?;
        apply_update(&mut self.params, &dir, eta)?;
        self.batch.refresh(&self.params);
        Ok((est, eta))
    }

    /// Samples `sweeps` further steps into a fresh density grid.
    pub fn sample_density(&mut self, sweeps: usize) -> SpinDensityGrid {
        let mut grid = SpinDensityGrid::new(self.params.geometry().cell, self.config.density_grid);
        for _ in 0..sweeps {
            self.batch.step(&self.params, &self.proposal);
            grid.accumulate_all(self.batch.configurations());
        }
        grid
    }
}

/// Options that do not belong in the config file.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Required for the honeycomb model, whose runs are long.
    pub long_run: bool,
    pub resume: Option<PathBuf>,
}

#[derive(Debug)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub log: Vec<EnergyRecord>,
    pub aborted_steps: u64,
    pub density: Option<SpinDensityGrid>,
    pub final_checkpoint: Checkpoint,
}

fn step_checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("step_{step:08}.bin"))
}

/// Runs `config.iterations` steps, writing the energy log, periodic and final
/// checkpoints and the final spin density under `config.out_dir`.
pub fn train(config: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    config.validate()?;
    if config.hamiltonian == HamiltonianName::HoneycombMoire && !opts.long_run {
        return Err(VmcError::Config(
            "honeycomb training is a long run; pass --long-run to start it".into(),
        ));
    }
    let dir = PathBuf::from(&config.out_dir);
    fs::create_dir_all(dir.join("checkpoints"))?;
    fs::write(dir.join(CONFIG_FILE), config.to_toml())?;
    let log_path = dir.join(LOG_FILE);

    let (mut trainer, mut log) = match &opts.resume {
        None => {
            let t = Trainer::new(config.clone())?;
            write_header(File::create(&log_path)?)?;
            t.checkpoint().save(&step_checkpoint_path(&dir, 0))?;
            t.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
            (t, Vec::new())
        }
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let t = Trainer::from_checkpoint(config.clone(), ckpt)?;
            // Drop rows written after the checkpoint so the log stays gapless.
            let previous = match File::open(&log_path) {
                Ok(f) => read_log(BufReader::new(f))?,
                Err(_) => Vec::new(),
            };
            let kept: Vec<EnergyRecord> = previous
                .into_iter()
                .filter(|r| r.step < t.step_count())
                .collect();
            if kept.len() as u64 != t.step_count() {
                log::warn!(
                    "energy log holds {} rows before step {}",
                    kept.len(),
                    t.step_count()
                );
            }
            let mut w = BufWriter::new(File::create(&log_path)?);
            write_header(&mut w)?;
            for r in &kept {
                writeln!(w, "{}", r.csv_row())?;
            }
            w.flush()?;
            (t, kept)
        }
    };

    let mut out = OpenOptions::new().append(true).open(&log_path)?;
    while (trainer.step_count() as usize) < config.iterations {
        let rec = trainer.step()?;
        writeln!(out, "{}", rec.csv_row())?;
        out.flush()?;
        log::info!(
            "step {} E = {:.6} ± {:.6} acc = {:.3}/{:.3}",
            rec.step,
            rec.energy_mean,
            rec.energy_stderr,
            rec.acceptance_coord,
            rec.acceptance_spin
        );
        log.push(rec);
        let done = trainer.step_count();
        if done % config.checkpoint_every as u64 == 0 {
            let c = trainer.checkpoint();
            c.save(&step_checkpoint_path(&dir, done))?;
            c.save(&dir.join(CHECKPOINT_FILE))?;
        }
    }
    let final_checkpoint = trainer.checkpoint();
    final_checkpoint.save(&dir.join(CHECKPOINT_FILE))?;

    let density =
        (config.density_sweeps > 0).then(|| trainer.sample_density(config.density_sweeps));
    if let Some(grid) = &density {
        let mut w = BufWriter::new(File::create(dir.join(DENSITY_FILE))?);
        grid.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(TrainSummary {
        out_dir: dir,
        log,
        aborted_steps: trainer.aborted_steps(),
        density,
        final_checkpoint,
    })
}

/// Spin density of a saved state: `config.density_sweeps` further sampling
/// steps with the checkpointed parameters, written to `density.csv`.
pub fn density_from_checkpoint(checkpoint: &Path, config: &RunConfig) -> Result<SpinDensityGrid> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut trainer = Trainer::from_checkpoint(config.clone(), ckpt)?;
    let grid = trainer.sample_density(config.density_sweeps.max(1));
    let dir = PathBuf::from(&config.out_dir);
    fs::create_dir_all(&dir)?;
    let mut w = BufWriter::new(File::create(dir.join(DENSITY_FILE))?);
    grid.write_csv(&mut w)?;
    w.flush()?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::SpinMode;
    use crate::optimize::OptMethod;

    fn tiny(method: OptMethod, out: &Path) -> RunConfig {
        RunConfig {
            hamiltonian: HamiltonianName::Rashba,
            n_electrons: 2,
            box_length: 3.0,
            n_layers: 1,
            n_heads: 2,
            d_attn: 4,
            d_attn_vals: 4,
            d_model: 8,
            n_det: 2,
            batch_size: 16,
            burn_in: 20,
            steps_per_update: 2,
            iterations: 4,
            checkpoint_every: 2,
            density_grid: 4,
            density_sweeps: 2,
            method,
            out_dir: out.to_string_lossy().into_owned(),
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_iterations_write_empty_log_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            iterations: 0,
            ..tiny(OptMethod::Sr, dir.path())
        };
        let s = train(&cfg, &TrainOptions::default()).unwrap();
        assert!(s.log.is_empty());
        let log = read_log(BufReader::new(
            File::open(dir.path().join(LOG_FILE)).unwrap(),
        ))
        .unwrap();
        assert!(log.is_empty());
        let c = Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(c.step, 0);
        assert!(dir.path().join("checkpoints/step_00000000.bin").exists());
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        for method in [OptMethod::Sgd, OptMethod::Sr, OptMethod::Kfac] {
            let a = tempfile::tempdir().unwrap();
            let full = train(&tiny(method, a.path()), &TrainOptions::default()).unwrap();

            let b = tempfile::tempdir().unwrap();
            let cfg = tiny(method, b.path());
            train(
                &RunConfig {
                    iterations: 2,
                    ..cfg.clone()
                },
                &TrainOptions::default(),
            )
            .unwrap();
            let resume = Some(b.path().join("checkpoints/step_00000002.bin"));
            let resumed = train(
                &cfg,
                &TrainOptions {
                    resume,
                    ..Default::default()
                },
            )
            .unwrap();

            assert_eq!(full.log.len(), resumed.log.len());
            for (x, y) in full.log.iter().zip(&resumed.log) {
                assert!(x.same_numbers(y), "{method:?}: {x:?} vs {y:?}");
            }
            // The two runs write to different directories, so their stored configs differ.
            let strip = |c: &Checkpoint| Checkpoint {
                config_toml: String::new(),
                ..c.clone()
            };
            assert_eq!(
                strip(&full.final_checkpoint),
                strip(&resumed.final_checkpoint),
                "{method:?}"
            );
            let steps: Vec<u64> = resumed.log.iter().map(|r| r.step).collect();
            assert_eq!(steps, (0..4).collect::<Vec<_>>());
        }
    }

    #[test]
    fn honeycomb_needs_long_run_flag() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            out_dir: dir.path().to_string_lossy().into_owned(),
            ..RunConfig::honeycomb_preset(1, 1)
        };
        assert!(matches!(
            train(&cfg, &TrainOptions::default()),
            Err(VmcError::Config(_))
        ));
    }

    #[test]
    fn seeds_reproduce_and_differ() {
        let dir = tempfile::tempdir().unwrap();
        let base = RunConfig {
            spin_mode: SpinMode::SectorPreserving,
            n_up: Some(1),
            ..tiny(OptMethod::Sr, dir.path())
        };
        let run = |seed| {
            let mut t = Trainer::new(RunConfig {
                seed,
                ..base.clone()
            })
            .unwrap();
            (0..2).map(|_| t.step().unwrap()).collect::<Vec<_>>()
        };
        let (x, y, z) = (run(1), run(1), run(2));
        assert!(x.iter().zip(&y).all(|(a, b)| a.same_numbers(b)));
        assert!(x[0].energy_mean != z[0].energy_mean);
    }
}
