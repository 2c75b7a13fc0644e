//! Flat TOML run configuration. Every key has a default (the spin-spiral
//! column of the hyperparameter table) and unknown keys are rejected.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ansatz::{ModelGeometry, SimulationBox};
use crate::error::{Result, VmcError};
use crate::mcmc::{ProposalParams, SpinInit, SpinMode};
use crate::models::{HamiltonianKind, HamiltonianSpec, RASHBA_KAPPA};
use crate::optimize::{OptMethod, OptimizerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HamiltonianName {
    FreeGas,
    SpinSpiral,
    Rashba,
    HoneycombMoire,
}

/// `a_M = √(2π/√3)`: the moiré cell area `√3 a_M²/2` equals `π`.
pub fn default_moire_length() -> f64 {
    (2.0 * PI / 3f64.sqrt()).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // system
    pub hamiltonian: HamiltonianName,
    pub n_electrons: usize,
    /// Square cell side for all but the honeycomb model.
    pub box_length: f64,
    pub spiral_j: f64,
    /// Spiral wavevector; `2π/L` along x when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spiral_qx: Option<f64>,
    pub spiral_qy: f64,
    pub moire_v0: f64,
    pub moire_phi: f64,
    pub moire_length: f64,
    pub r_s: f64,
    /// Honeycomb cell as `nx × ny` rectangles of two moiré cells each.
    pub honeycomb_nx: usize,
    pub honeycomb_ny: usize,

    // network
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_attn: usize,
    pub d_attn_vals: usize,
    pub d_model: usize,
    pub n_mlp_per_layer: usize,
    pub n_det: usize,

    // sampler
    pub sigma: f64,
    pub spin_mode: SpinMode,
    pub p_flip: f64,
    pub p_swap: f64,
    /// Initial number of up spins; random when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_up: Option<usize>,
    pub steps_per_update: usize,
    pub burn_in: usize,

    // optimizer
    pub method: OptMethod,
    pub eta0: f64,
    pub t0: f64,
    pub rho: f64,
    pub damping: f64,
    pub norm_constraint: f64,
    pub kfac_decay: f64,
    pub cg_tolerance: f64,
    pub cg_max_iter: usize,

    // run
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub out_dir: String,
    pub checkpoint_every: usize,
    pub density_grid: usize,
    /// Sampling steps accumulated into the final density.
    pub density_sweeps: usize,
    pub moving_average_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        Self {
            hamiltonian: HamiltonianName::SpinSpiral,
            n_electrons: 3,
            box_length: 6.0,
            spiral_j: 1.0,
            spiral_qx: None,
            spiral_qy: 0.0,
            moire_v0: 10.0,
            moire_phi: PI,
            moire_length: default_moire_length(),
            r_s: 10.0,
            honeycomb_nx: 1,
            honeycomb_ny: 1,
            n_layers: 4,
            n_heads: 4,
            d_attn: 16,
            d_attn_vals: 16,
            d_model: 64,
            n_mlp_per_layer: 1,
            n_det: 4,
            sigma: 0.5,
            spin_mode: SpinMode::Flips,
            p_flip: 0.1,
            p_swap: 0.03,
            n_up: None,
            steps_per_update: 10,
            burn_in: 1000,
            method: opt.method,
            eta0: opt.eta0,
            t0: opt.t0,
            rho: opt.rho,
            damping: opt.damping,
            norm_constraint: opt.norm_constraint,
            kfac_decay: opt.kfac_decay,
            cg_tolerance: opt.cg_tolerance,
            cg_max_iter: opt.cg_max_iter,
            iterations: 20_000,
            batch_size: 1024,
            seed: 0,
            out_dir: "out".into(),
            checkpoint_every: 1000,
            density_grid: 64,
            density_sweeps: 100,
            moving_average_window: 5,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| VmcError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| VmcError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_electrons", self.n_electrons),
            ("honeycomb_nx", self.honeycomb_nx),
            ("honeycomb_ny", self.honeycomb_ny),
            ("steps_per_update", self.steps_per_update),
            ("batch_size", self.batch_size),
            ("checkpoint_every", self.checkpoint_every),
            ("density_grid", self.density_grid),
            ("moving_average_window", self.moving_average_window),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(VmcError::Config(format!("{name} must be positive")));
            }
        }
        if let Some(n_up) = self.n_up {
            if n_up > self.n_electrons {
                return Err(VmcError::Config(format!(
                    "n_up = {n_up} exceeds n_electrons"
                )));
            }
        }
        for (name, v) in [("moire_length", self.moire_length), ("r_s", self.r_s)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(VmcError::Config(format!("{name} must be positive")));
            }
        }
        self.geometry()?.validate()?;
        self.hamiltonian_spec()?.validate()?;
        self.proposal().validate()?;
        self.optimizer().validate()
    }

    pub fn cell(&self) -> Result<SimulationBox> {
        match self.hamiltonian {
            HamiltonianName::HoneycombMoire => SimulationBox::new(
                self.honeycomb_nx as f64 * 3f64.sqrt() * self.moire_length,
                self.honeycomb_ny as f64 * self.moire_length,
            ),
            _ => SimulationBox::new(self.box_length, self.box_length),
        }
    }

    pub fn geometry(&self) -> Result<ModelGeometry> {
        Ok(ModelGeometry {
            n_electrons: self.n_electrons,
            cell: self.cell()?,
            d_model: self.d_model,
            d_attn: self.d_attn,
            d_attn_vals: self.d_attn_vals,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            n_mlp_per_layer: self.n_mlp_per_layer,
            n_det: self.n_det,
        })
    }

    pub fn hamiltonian_spec(&self) -> Result<HamiltonianSpec> {
        let cell = self.cell()?;
        let kind = match self.hamiltonian {
            HamiltonianName::FreeGas => HamiltonianKind::FreeGas,
            HamiltonianName::SpinSpiral => HamiltonianKind::SpinSpiral {
                j: self.spiral_j,
                q: [self.spiral_qx.unwrap_or(2.0 * PI / cell.lx), self.spiral_qy],
            },
            HamiltonianName::Rashba => HamiltonianKind::Rashba {
                kappa: RASHBA_KAPPA,
            },
            HamiltonianName::HoneycombMoire => HamiltonianKind::HoneycombMoire {
                v0: self.moire_v0,
                phi: self.moire_phi,
                a_m: self.moire_length,
                r_s: self.r_s,
            },
        };
        Ok(HamiltonianSpec { kind, cell })
    }

    pub fn proposal(&self) -> ProposalParams {
        ProposalParams {
            sigma: self.sigma,
            p_flip: self.p_flip,
            p_swap: self.p_swap,
            spin_mode: self.spin_mode,
        }
    }

    pub fn spin_init(&self) -> SpinInit {
        match self.n_up {
            Some(n_up) => SpinInit::Fixed { n_up },
            None => SpinInit::Random,
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            method: self.method,
            eta0: self.eta0,
            t0: self.t0,
            rho: self.rho,
            damping: self.damping,
            norm_constraint: self.norm_constraint,
            kfac_decay: self.kfac_decay,
            cg_tolerance: self.cg_tolerance,
            cg_max_iter: self.cg_max_iter,
        }
    }

    /// Rashba column of the hyperparameter table for `n` electrons in an
    /// `l × l` cell.
    pub fn rashba_preset(n: usize, l: f64) -> Self {
        Self {
            hamiltonian: HamiltonianName::Rashba,
            n_electrons: n,
            box_length: l,
            eta0: 0.02,
            iterations: 2500,
            batch_size: 2048,
            moving_average_window: 20,
            ..Self::default()
        }
    }

    /// Antiferromagnet column: honeycomb moiré, two layers, two perceptrons
    /// per layer, KFAC.
    pub fn honeycomb_preset(nx: usize, ny: usize) -> Self {
        Self {
            hamiltonian: HamiltonianName::HoneycombMoire,
            n_electrons: 4 * nx * ny,
            honeycomb_nx: nx,
            honeycomb_ny: ny,
            n_layers: 2,
            d_attn: 32,
            d_attn_vals: 32,
            d_model: 128,
            n_mlp_per_layer: 2,
            spin_mode: SpinMode::SectorPreserving,
            n_up: Some(2 * nx * ny),
            method: OptMethod::Kfac,
            t0: 2e5,
            damping: 1e-4,
            iterations: 150_000,
            ..Self::default()
        }
    }
}
