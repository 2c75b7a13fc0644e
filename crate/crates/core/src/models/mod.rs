//! Hamiltonians and their local energies `(HΨ)/Ψ`.
//!
//! Units are `ħ = m = 1`. All spin terms are evaluated through amplitude
//! ratios at configurations with one spin flipped, so any [`Wavefunction`]
//! works, including injected analytic states.

mod ewald;
mod moire;
mod reference;

pub use ewald::Ewald;
pub use moire::MoirePotential;
pub use reference::{
    exact_reference_energy, exact_reference_energy_with, rashba_dispersion, reference_report,
    single_particle_spectrum, spiral_dispersion, PlaneWave, ReferenceOptions, ReferenceReport,
    SpinorOrbital, SpinorSlater,
};

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::ansatz::{ParticleConfiguration, SimulationBox};
use crate::diff::{DerivativeBundle, LogAmplitude, Wavefunction};
use crate::error::{Result, VmcError};

/// Rashba coupling `p_x σ_y − p_y σ_x` as `κ_{μν}` with `μ` the Pauli index.
pub const RASHBA_KAPPA: [[f64; 2]; 2] = [[0.0, -1.0], [1.0, 0.0]];

#[derive(Clone, Debug, PartialEq)]
pub enum HamiltonianKind {
    FreeGas,
    /// Zeeman field `B(r) = −J (cos q·r, sin q·r, 0)`.
    SpinSpiral {
        j: f64,
        q: [f64; 2],
    },
    /// `Σ_{μν} κ_{μν} σ^μ p^ν`.
    Rashba {
        kappa: [[f64; 2]; 2],
    },
    HoneycombMoire {
        v0: f64,
        phi: f64,
        a_m: f64,
        r_s: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSpec {
    pub kind: HamiltonianKind,
    pub cell: SimulationBox,
}

impl HamiltonianSpec {
    pub fn validate(&self) -> Result<()> {
        SimulationBox::new(self.cell.lx, self.cell.ly)?;
        match &self.kind {
            HamiltonianKind::SpinSpiral { j, q } => {
                if !j.is_finite() {
                    return Err(VmcError::Config("spiral J must be finite".into()));
                }
                for axis in 0..2 {
                    let m = q[axis] * self.cell.length(axis) / (2.0 * PI);
                    if (m - m.round()).abs() > 1e-9 {
                        return Err(VmcError::Config(format!(
                            "spiral q[{axis}] = {} is not commensurate with the box",
                            q[axis]
                        )));
                    }
                }
            }
            HamiltonianKind::Rashba { kappa } => {
                if kappa.iter().flatten().any(|k| !k.is_finite()) {
                    return Err(VmcError::Config("kappa must be finite".into()));
                }
            }
            HamiltonianKind::HoneycombMoire { v0, phi, a_m, r_s } => {
                if !(*a_m > 0.0) || ![v0, phi, r_s].iter().all(|x| x.is_finite()) {
                    return Err(VmcError::Config("invalid moire parameters".into()));
                }
            }
            HamiltonianKind::FreeGas => {}
        }
        Ok(())
    }

    pub fn is_interacting(&self) -> bool {
        matches!(self.kind, HamiltonianKind::HoneycombMoire { .. })
    }
}

/// Per-walker local energy split by Hamiltonian term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LocalEnergyBreakdown {
    pub kinetic: Complex64,
    pub potential_external: Complex64,
    pub potential_interaction: Complex64,
    pub spin: Complex64,
    /// Spin-flipped amplitudes that were degenerate and contributed zero.
    pub degenerate_flips: usize,
}

impl LocalEnergyBreakdown {
    pub fn total(&self) -> Complex64 {
        self.kinetic + self.potential_external + self.potential_interaction + self.spin
    }
}

/// A spin-term contribution and how many flipped amplitudes were degenerate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpinContribution {
    pub energy: Complex64,
    pub degenerate_flips: usize,
}

/// A Hamiltonian with its precomputed tables.
#[derive(Clone, Debug)]
pub struct Hamiltonian {
    spec: HamiltonianSpec,
    ewald: Option<Ewald>,
    moire: Option<MoirePotential>,
}

impl Hamiltonian {
    pub fn new(spec: HamiltonianSpec) -> Result<Self> {
        spec.validate()?;
        let (ewald, moire) = match spec.kind {
            HamiltonianKind::HoneycombMoire { v0, phi, a_m, .. } => (
                Some(Ewald::new(spec.cell)),
                Some(MoirePotential::new(v0, phi, a_m)),
            ),
            _ => (None, None),
        };
        Ok(Self { spec, ewald, moire })
    }

    pub fn spec(&self) -> &HamiltonianSpec {
        &self.spec
    }

    pub fn local_energy<W: Wavefunction + ?Sized>(
        &self,
        wf: &W,
        config: &ParticleConfiguration,
    ) -> Result<LocalEnergyBreakdown> {
        let d = wf.spatial_derivatives(config)?;
        let mut out = LocalEnergyBreakdown {
            kinetic: kinetic_from_derivatives(&d),
            ..Default::default()
        };
        let spin = match self.spec.kind {
            HamiltonianKind::SpinSpiral { j, q } => {
                Some(zeeman_local(wf, config, &d.log_psi, spiral_field(j, q))?)
            }
            HamiltonianKind::Rashba { kappa } => Some(soc_local(wf, config, &d.log_psi, &kappa)?),
            _ => None,
        };
        if let Some(s) = spin {
            out.spin = s.energy;
            out.degenerate_flips = s.degenerate_flips;
        }
        if let HamiltonianKind::HoneycombMoire { r_s, .. } = self.spec.kind {
            let moire = self.moire.as_ref().expect("moiré Hamiltonians carry these tables");
            let ewald = self.ewald.as_ref().expect("moiré Hamiltonians carry these tables");
            out.potential_external = moire.total(config.positions()).into();
            out.potential_interaction = interaction_potential(config, ewald, r_s).into();
        }
        Ok(out)
    }
}

/// `−½ Σ_i (∇²_i log Ψ + (∇_i log Ψ)²)`.
pub fn kinetic_from_derivatives(d: &DerivativeBundle) -> Complex64 {
    let gg: Complex64 = d.grad.iter().map(|g| g * g).sum();
    -0.5 * (d.laplacian + gg)
}

pub fn kinetic_local<W: Wavefunction + ?Sized>(
    wf: &W,
    config: &ParticleConfiguration,
) -> Result<Complex64> {
    Ok(kinetic_from_derivatives(&wf.spatial_derivatives(config)?))
}

pub fn external_potential(config: &ParticleConfiguration, potential: &MoirePotential) -> f64 {
    potential.total(config.positions())
}

/// `(r_s/2) Σ_{i≠j} v(r_i − r_j)` plus the per-electron Madelung term.
/// Coincident electrons give `+∞`.
pub fn interaction_potential(config: &ParticleConfiguration, ewald: &Ewald, r_s: f64) -> f64 {
    r_s * ewald.energy(config.positions())
}

/// `B(r) = −J (cos q·r, sin q·r, 0)`.
pub fn spiral_field(j: f64, q: [f64; 2]) -> impl Fn([f64; 2]) -> [f64; 3] {
    move |r| {
        let t = q[0] * r[0] + q[1] * r[1];
        [-j * t.cos(), -j * t.sin(), 0.0]
    }
}

/// `Ψ(flip i)/Ψ`, or zero and a flag if the flipped amplitude vanishes.
fn flip_ratio<W: Wavefunction + ?Sized>(
    wf: &W,
    flipped: &ParticleConfiguration,
    log_psi: &LogAmplitude,
) -> Result<Option<Complex64>> {
    match wf.log_psi(flipped) {
        Ok(lp) if !lp.is_degenerate() => Ok(Some(log_psi.ratio_to(&lp))),
        Ok(_) | Err(VmcError::DegenerateAmplitude) => Ok(None),
        Err(e) => Err(e),
    }
}

/// `Σ_i Σ_{μ,α'} B^μ(r_i) σ^μ_{s_i α'} Ψ(s_i → α')/Ψ`. With `σ^y_{s,−s} = −i s`,
/// electron `i` contributes `B_z s + (B_x − i s B_y) Ψ(flip i)/Ψ`.
pub fn zeeman_local<W, F>(
    wf: &W,
    config: &ParticleConfiguration,
    log_psi: &LogAmplitude,
    field: F,
) -> Result<SpinContribution>
where
    W: Wavefunction + ?Sized,
    F: Fn([f64; 2]) -> [f64; 3],
{
    let mut energy = Complex64::new(0.0, 0.0);
    let mut degenerate_flips = 0;
    for i in 0..config.n_electrons() {
        let b = field(config.position(i));
        let s = config.spin(i) as f64;
        energy += b[2] * s;
        if b[0] == 0.0 && b[1] == 0.0 {
            continue;
        }
        match flip_ratio(wf, &config.with_spin_flipped(i), log_psi)? {
            Some(r) => energy += Complex64::new(b[0], -s * b[1]) * r,
            None => degenerate_flips += 1,
        }
    }
    Ok(SpinContribution {
        energy,
        degenerate_flips,
    })
}

/// `Σ_i Σ_{μν} κ_{μν} σ^μ_{s_i,−s_i} (−i ∂_ν Ψ(flip i))/Ψ` for `μ, ν ∈ {x, y}`.
pub fn soc_local<W: Wavefunction + ?Sized>(
    wf: &W,
    config: &ParticleConfiguration,
    log_psi: &LogAmplitude,
    kappa: &[[f64; 2]; 2],
) -> Result<SpinContribution> {
    let mut energy = Complex64::new(0.0, 0.0);
    let mut degenerate_flips = 0;
    if kappa.iter().flatten().all(|&k| k == 0.0) {
        return Ok(SpinContribution {
            energy,
            degenerate_flips,
        });
    }
    for i in 0..config.n_electrons() {
        let s = config.spin(i) as f64;
        let flipped = config.with_spin_flipped(i);
        let (lp, g) = match wf.electron_gradient(&flipped, i) {
            Ok((lp, _)) if lp.is_degenerate() => {
                degenerate_flips += 1;
                continue;
            }
            Ok(v) => v,
            Err(VmcError::DegenerateAmplitude) => {
                degenerate_flips += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let r = log_psi.ratio_to(&lp);
        // Off-diagonal Pauli elements σ^x_{s,−s} = 1, σ^y_{s,−s} = −i s.
        let sigma = [Complex64::new(1.0, 0.0), Complex64::new(0.0, -s)];
        let mut t = Complex64::new(0.0, 0.0);
        for mu in 0..2 {
            for nu in 0..2 {
                t += kappa[mu][nu] * sigma[mu] * g[nu];
            }
        }
        energy += Complex64::new(0.0, -1.0) * r * t;
    }
    Ok(SpinContribution {
        energy,
        degenerate_flips,
    })
}

/// Local energy of `wf` under `h`.
pub fn local_energy<W: Wavefunction + ?Sized>(
    wf: &W,
    config: &ParticleConfiguration,
    h: &Hamiltonian,
) -> Result<LocalEnergyBreakdown> {
    h.local_energy(wf, config)
}
