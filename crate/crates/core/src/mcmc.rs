//! Metropolis sampling of `|Ψ|²` over positions and spins.
//!
//! Every step moves all coordinates with a symmetric Gaussian proposal and
//! then, in a separately accepted sub-step, proposes a spin update. Each
//! walker owns a ChaCha stream derived from the master seed, so trajectories
//! do not depend on thread scheduling or on which other walkers are present.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{ParticleConfiguration, SimulationBox};
use crate::diff::{LogAmplitude, Wavefunction};
use crate::error::{Result, VmcError};

/// Target coordinate acceptance for [`adapt_sigma`].
pub const TARGET_ACCEPTANCE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinMode {
    None,
    Flips,
    SectorPreserving,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProposalParams {
    pub sigma: f64,
    pub p_flip: f64,
    pub p_swap: f64,
    pub spin_mode: SpinMode,
}

impl ProposalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(VmcError::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        for (name, p) in [("p_flip", self.p_flip), ("p_swap", self.p_swap)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(VmcError::Config(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }
}

/// Gaussian displacement of every coordinate, wrapped into the cell.
pub fn propose_coordinates<R: Rng + ?Sized>(
    config: &ParticleConfiguration,
    sigma: f64,
    rng: &mut R,
) -> ParticleConfiguration {
    let mut out = config.clone();
    for i in 0..config.n_electrons() {
        let p = config.position(i);
        let dx: f64 = StandardNormal.sample(rng);
        let dy: f64 = StandardNormal.sample(rng);
        out.set_position(i, [p[0] + sigma * dx, p[1] + sigma * dy]);
    }
    out
}

/// Flips each spin independently with probability `p_flip`.
pub fn propose_spin_flips<R: Rng + ?Sized>(
    config: &ParticleConfiguration,
    p_flip: f64,
    rng: &mut R,
) -> ParticleConfiguration {
    let mut out = config.clone();
    for i in 0..config.n_electrons() {
        if rng.random::<f64>() < p_flip {
            out.flip_spin(i);
        }
    }
    out
}

/// Poisson variate by sequential inversion; intended for small `lambda`.
pub fn poisson_inversion<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut k = 0;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u >= cdf && p > 0.0 {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    k
}

/// `m ~ Poisson(p_swap · N / 2)` exchanges of spin labels between uniformly
/// chosen electron pairs. Magnetization is conserved exactly.
pub fn propose_sector_swaps<R: Rng + ?Sized>(
    config: &ParticleConfiguration,
    p_swap: f64,
    rng: &mut R,
) -> ParticleConfiguration {
    let n = config.n_electrons();
    let mut out = config.clone();
    if n < 2 {
        return out;
    }
    let m = poisson_inversion(p_swap * n as f64 / 2.0, rng);
    for _ in 0..m {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        out.swap_spins(i, j);
    }
    out
}

/// Accepts with probability `min(1, |ψ'/ψ|²)`; degenerate candidates never.
/// Always consumes exactly one uniform variate.
pub fn metropolis_accept<R: Rng + ?Sized>(
    old: &LogAmplitude,
    new: &LogAmplitude,
    rng: &mut R,
) -> bool {
    let u: f64 = rng.random();
    if new.is_degenerate() {
        return false;
    }
    let p = (2.0 * (new.log_abs - old.log_abs)).exp().min(1.0);
    u < p
}

/// Burn-in step-size control: `σ · clamp(acceptance / 0.5, 0.9, 1.1)`.
pub fn adapt_sigma(sigma: f64, coordinate_acceptance: f64) -> f64 {
    sigma * (coordinate_acceptance / TARGET_ACCEPTANCE).clamp(0.9, 1.1)
}

/// Proposal/acceptance counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStats {
    pub coordinate_proposed: u64,
    pub coordinate_accepted: u64,
    pub spin_proposed: u64,
    pub spin_accepted: u64,
    pub steps: u64,
}

impl ChainStats {
    pub fn coordinate_acceptance(&self) -> f64 {
        ratio(self.coordinate_accepted, self.coordinate_proposed)
    }

    pub fn spin_acceptance(&self) -> f64 {
        ratio(self.spin_accepted, self.spin_proposed)
    }

    pub fn merge(&mut self, other: &ChainStats) {
        self.coordinate_proposed += other.coordinate_proposed;
        self.coordinate_accepted += other.coordinate_accepted;
        self.spin_proposed += other.spin_proposed;
        self.spin_accepted += other.spin_accepted;
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Exact state of a walker's random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

/// One Markov chain: configuration, cached amplitude, private stream.
#[derive(Clone, Debug)]
pub struct Walker {
    config: ParticleConfiguration,
    log_psi: LogAmplitude,
    rng: ChaCha8Rng,
}

impl Walker {
    pub fn config(&self) -> &ParticleConfiguration {
        &self.config
    }

    pub fn log_psi(&self) -> LogAmplitude {
        self.log_psi
    }

    pub fn rng_state(&self) -> RngState {
        RngState {
            seed: self.rng.get_seed(),
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos(),
        }
    }

    fn evaluate<W: Wavefunction + ?Sized>(wf: &W, c: &ParticleConfiguration) -> LogAmplitude {
        // Any evaluation failure makes the candidate unacceptable.
        wf.log_psi(c).unwrap_or(LogAmplitude::ZERO)
    }

    fn step<W: Wavefunction + ?Sized>(&mut self, wf: &W, prop: &ProposalParams) -> ChainStats {
        let mut st = ChainStats {
            coordinate_proposed: 1,
            steps: 1,
            ..Default::default()
        };
        let cand = propose_coordinates(&self.config, prop.sigma, &mut self.rng);
        let lp = Self::evaluate(wf, &cand);
        if metropolis_accept(&self.log_psi, &lp, &mut self.rng) {
            self.config = cand;
            self.log_psi = lp;
            st.coordinate_accepted = 1;
        }
        let cand = match prop.spin_mode {
            SpinMode::None => return st,
            SpinMode::Flips => propose_spin_flips(&self.config, prop.p_flip, &mut self.rng),
            SpinMode::SectorPreserving => {
                propose_sector_swaps(&self.config, prop.p_swap, &mut self.rng)
            }
        };
        // An unchanged candidate is not a proposal.
        if cand.spins() == self.config.spins() {
            return st;
        }
        st.spin_proposed = 1;
        let lp = Self::evaluate(wf, &cand);
        if metropolis_accept(&self.log_psi, &lp, &mut self.rng) {
            self.config = cand;
            self.log_psi = lp;
            st.spin_accepted = 1;
        }
        st
    }
}

/// How spins are assigned at initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpinInit {
    /// `n_up` electrons up, placed at random.
    Fixed { n_up: usize },
    /// Each spin independently up or down.
    Random,
}

/// A population of walkers and their accumulated statistics.
#[derive(Clone, Debug)]
pub struct WalkerBatch {
    walkers: Vec<Walker>,
    stats: ChainStats,
}

fn walker_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

impl WalkerBatch {
    /// Walkers at the given configurations, stream `k` for walker `k`.
    pub fn from_configurations<W: Wavefunction + ?Sized>(
        wf: &W,
        configs: Vec<ParticleConfiguration>,
        seed: u64,
    ) -> Result<Self> {
        let walkers = configs
            .into_iter()
            .enumerate()
            .map(|(k, config)| {
                let log_psi = wf.log_psi(&config)?;
                if log_psi.is_degenerate() {
                    return Err(VmcError::DegenerateAmplitude);
                }
                Ok(Walker {
                    config,
                    log_psi,
                    rng: walker_rng(seed, k),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            walkers,
            stats: ChainStats::default(),
        })
    }

    /// Uniform random positions; redraws configurations with vanishing
    /// amplitude.
    pub fn random<W: Wavefunction + ?Sized>(
        wf: &W,
        cell: SimulationBox,
        n_walkers: usize,
        spins: SpinInit,
        seed: u64,
    ) -> Result<Self> {
        let n = wf.n_electrons();
        if let SpinInit::Fixed { n_up } = spins {
            if n_up > n {
                return Err(VmcError::Config(format!(
                    "{n_up} up spins for {n} electrons"
                )));
            }
        }
        let walkers = (0..n_walkers)
            .into_par_iter()
            .map(|k| {
                let mut rng = walker_rng(seed, k);
                for _ in 0..1000 {
                    let pos = (0..n)
                        .map(|_| {
                            [
                                rng.random_range(0.0..cell.lx),
                                rng.random_range(0.0..cell.ly),
                            ]
                        })
                        .collect();
                    let s: Vec<i8> = match spins {
                        SpinInit::Fixed { n_up } => {
                            let mut s: Vec<i8> =
                                (0..n).map(|i| if i < n_up { 1 } else { -1 }).collect();
                            s.shuffle(&mut rng);
                            s
                        }
                        SpinInit::Random => (0..n)
                            .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
                            .collect(),
                    };
                    let config = ParticleConfiguration::new(cell, pos, s)?;
                    match wf.log_psi(&config) {
                        Ok(lp) if !lp.is_degenerate() => {
                            return Ok(Walker {
                                config,
                                log_psi: lp,
                                rng,
                            })
                        }
                        Ok(_) | Err(VmcError::DegenerateAmplitude) => continue,
                        Err(e) => return Err(e),
                    }
                }
                Err(VmcError::Numerical(
                    "no configuration with nonzero amplitude found".into(),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            walkers,
            stats: ChainStats::default(),
        })
    }

    /// Restores walkers exactly, including their stream positions.
    pub fn restore<W: Wavefunction + ?Sized>(
        wf: &W,
        states: Vec<(ParticleConfiguration, RngState)>,
        stats: ChainStats,
    ) -> Result<Self> {
        let walkers = states
            .into_iter()
            .map(|(config, st)| {
                let mut rng = ChaCha8Rng::from_seed(st.seed);
                rng.set_stream(st.stream);
                rng.set_word_pos(st.word_pos);
                let log_psi = wf.log_psi(&config)?;
                Ok(Walker {
                    config,
                    log_psi,
                    rng,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { walkers, stats })
    }

    pub fn len(&self) -> usize {
        self.walkers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.walkers.is_empty()
    }

    pub fn walkers(&self) -> &[Walker] {
        &self.walkers
    }

    pub fn configurations(&self) -> impl Iterator<Item = &ParticleConfiguration> {
        self.walkers.iter().map(|w| &w.config)
    }

    pub fn stats(&self) -> ChainStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = ChainStats::default();
    }

    /// Recomputes every cached amplitude after a parameter change.
    pub fn refresh<W: Wavefunction + ?Sized>(&mut self, wf: &W) {
        self.walkers
            .par_iter_mut()
            .for_each(|w| w.log_psi = Walker::evaluate(wf, &w.config));
    }

    /// Compares cached amplitudes against fresh evaluations.
    pub fn validate_caches<W: Wavefunction + ?Sized>(&self, wf: &W) -> Result<()> {
        for (k, w) in self.walkers.iter().enumerate() {
            let fresh = Walker::evaluate(wf, &w.config);
            let same = (fresh.is_degenerate() && w.log_psi.is_degenerate())
                || ((fresh.log_abs - w.log_psi.log_abs).abs()
                    <= 1e-9 * (1.0 + fresh.log_abs.abs()));
            if !same {
                return Err(VmcError::Numerical(format!(
                    "walker {k}: cached log|psi| {} but fresh {}",
                    w.log_psi.log_abs, fresh.log_abs
                )));
            }
        }
        Ok(())
    }

    /// Advances every walker one step. Returns this step's counters.
    pub fn step<W: Wavefunction + ?Sized>(&mut self, wf: &W, prop: &ProposalParams) -> ChainStats {
        let per: Vec<ChainStats> = self
            .walkers
            .par_iter_mut()
            .map(|w| w.step(wf, prop))
            .collect();
        let mut st = ChainStats {
            steps: 1,
            ..Default::default()
        };
        for s in &per {
            st.merge(s);
        }
        self.stats.merge(&st);
        self.stats.steps += 1;
        if cfg!(debug_assertions) && self.stats.steps % 64 == 0 {
            if let Some(w) = self.walkers.first() {
                let fresh = Walker::evaluate(wf, &w.config);
                debug_assert!(
                    fresh.is_degenerate() == w.log_psi.is_degenerate()
                        && (fresh.is_degenerate()
                            || (fresh.log_abs - w.log_psi.log_abs).abs() < 1e-8),
                    "stale amplitude cache"
                );
            }
        }
        st
    }
}

/// Advances `batch` by one step under `wf`.
pub fn step<W: Wavefunction + ?Sized>(
    batch: &mut WalkerBatch,
    wf: &W,
    prop: &ProposalParams,
) -> ChainStats {
    batch.step(wf, prop)
}
