//! Variational Monte Carlo ground states of two-dimensional spinful fermions.
//!
//! The wavefunction is a transformer over joint (position, spin) electron
//! streams closed by a sum of complex generalized-orbital determinants.
//! Sampling alternates Gaussian coordinate moves with discrete spin moves,
//! and parameters are trained by natural-gradient descent on the variational
//! energy.
//!
//! Module map:
//! - [`diff`]: log-amplitudes, forward derivative propagation, reverse-mode
//!   parameter gradients.
//! - [`ansatz`]: geometry, parameters, and the transformer layers.
//! - [`models`]: Hamiltonians, local energies, Ewald sums, exact references.
//! - [`mcmc`]: walker batches and Metropolis updates.
//! - [`optimize`]: gradient estimation, SR and KFAC preconditioning.
//! - [`runner`]: configuration, training loop, checkpoints, observables.

pub mod ansatz;
pub mod diff;
pub mod error;
pub mod mcmc;
pub mod models;
pub mod optimize;
pub mod runner;

pub use error::{Result, VmcError};
