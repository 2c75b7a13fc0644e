//! Configuration, the training loop, checkpoints, logs and observables.

mod checkpoint;
pub mod checks;
mod config;
mod density;
mod log;
mod train;

pub use checkpoint::{Checkpoint, WalkerState, FORMAT_VERSION, MAGIC};
pub use config::{default_moire_length, HamiltonianName, RunConfig};
pub use density::SpinDensityGrid;
pub use log::{
    moving_average, read_log, report_moving_average, write_header, EnergyRecord, LOG_HEADER,
};
pub use train::{
    density_from_checkpoint, train, TrainOptions, TrainSummary, Trainer, CHECKPOINT_FILE,
    CONFIG_FILE, DENSITY_FILE, LOG_FILE, MAX_CONSECUTIVE_ABORTS,
};

use crate::error::Result;
use crate::models::{reference_report, ReferenceOptions, ReferenceReport};

/// Exact noninteracting ground state for the system described by `config`.
pub fn reference(config: &RunConfig) -> Result<ReferenceReport> {
    config.validate()?;
    reference_report(
        &config.hamiltonian_spec()?,
        config.n_electrons,
        &ReferenceOptions::default(),
    )
}
