//! Exact single-particle spectra in a plane-wave ⊗ spin basis, and Slater
//! determinants of the resulting spinor orbitals.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{HamiltonianKind, HamiltonianSpec};
use crate::ansatz::{ParticleConfiguration, SimulationBox};
use crate::diff::logdet::{log_det_jets, ComplexLu, MatrixJets};
use crate::diff::{DerivativeBundle, LogAmplitude, Wavefunction, DEGENERATE_LOG_ABS};
use crate::error::{Result, VmcError};

/// Coefficients below this are dropped from orbitals.
const COEFF_EPS: f64 = 1e-13;

/// Plane-wave cutoff schedule for [`exact_reference_energy`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceOptions {
    /// Cutoff radii are multiples of the smallest reciprocal spacing.
    pub initial_cutoff: usize,
    pub max_cutoff: usize,
    /// Successive-cutoff change accepted as converged.
    pub tolerance: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self {
            initial_cutoff: 2,
            max_cutoff: 16,
            tolerance: 1e-10,
        }
    }
}

/// Single plane-wave spinor component `coeff · e^{ik·r} |spin⟩`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneWave {
    pub k: [f64; 2],
    pub spin: i8,
    pub coeff: Complex64,
}

/// An eigenstate of the single-particle Hamiltonian.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinorOrbital {
    pub energy: f64,
    pub components: Vec<PlaneWave>,
}

impl SpinorOrbital {
    /// Value, `∂_x`, `∂_y`, `∂²_x`, `∂²_y` at `(r, s)`.
    fn eval(&self, r: [f64; 2], s: i8) -> [Complex64; 5] {
        let mut out = [Complex64::new(0.0, 0.0); 5];
        for c in self.components.iter().filter(|c| c.spin == s) {
            let v = c.coeff * Complex64::from_polar(1.0, c.k[0] * r[0] + c.k[1] * r[1]);
            out[0] += v;
            out[1] += Complex64::i() * c.k[0] * v;
            out[2] += Complex64::i() * c.k[1] * v;
            out[3] -= c.k[0] * c.k[0] * v;
            out[4] -= c.k[1] * c.k[1] * v;
        }
        out
    }
}

/// Momenta `2π(m/Lx, n/Ly)` with `|k| ≤ cutoff · 2π / max(Lx, Ly)`.
fn momenta(cell: SimulationBox, cutoff: usize) -> Vec<[f64; 2]> {
    let kmax = cutoff as f64 * 2.0 * PI / cell.lx.max(cell.ly);
    let (bx, by) = (2.0 * PI / cell.lx, 2.0 * PI / cell.ly);
    let (mx, my) = ((kmax / bx).floor() as i64, (kmax / by).floor() as i64);
    let mut ks = Vec::new();
    for m in -mx..=mx {
        for n in -my..=my {
            let k = [m as f64 * bx, n as f64 * by];
            if k[0].hypot(k[1]) <= kmax * (1.0 + 1e-12) {
                ks.push(k);
            }
        }
    }
    ks
}

/// Diagonalizes the single-particle Hamiltonian in the plane-wave ⊗ spin
/// basis truncated at `cutoff`. Orbitals are sorted by energy.
pub fn single_particle_spectrum(
    spec: &HamiltonianSpec,
    cutoff: usize,
) -> Result<Vec<SpinorOrbital>> {
    spec.validate()?;
    if spec.is_interacting() {
        return Err(VmcError::Unsupported(
            "no exact reference for interacting Hamiltonians".into(),
        ));
    }
    let ks = momenta(spec.cell, cutoff);
    let dim = 2 * ks.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut h = DMatrix::from_element(dim, dim, zero);
    let find = |k: [f64; 2]| {
        ks.iter()
            .position(|p| (p[0] - k[0]).abs() < 1e-9 && (p[1] - k[1]).abs() < 1e-9)
    };
    for (a, k) in ks.iter().enumerate() {
        let kin = 0.5 * (k[0] * k[0] + k[1] * k[1]);
        h[(2 * a, 2 * a)] += kin;
        h[(2 * a + 1, 2 * a + 1)] += kin;
        match &spec.kind {
            HamiltonianKind::SpinSpiral { j, q } => {
                // ⟨k − q, ↑| −J e^{−iq·r} σ⁺ |k, ↓⟩
                if let Some(b) = find([k[0] - q[0], k[1] - q[1]]) {
                    h[(2 * b, 2 * a + 1)] += -j;
                    h[(2 * a + 1, 2 * b)] += -j;
                }
            }
            HamiltonianKind::Rashba { kappa } => {
                let bx = kappa[0][0] * k[0] + kappa[0][1] * k[1];
                let by = kappa[1][0] * k[0] + kappa[1][1] * k[1];
                // bx σ_x + by σ_y
                h[(2 * a, 2 * a + 1)] += Complex64::new(bx, -by);
                h[(2 * a + 1, 2 * a)] += Complex64::new(bx, by);
            }
            _ => {}
        }
    }
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    Ok(order
        .into_iter()
        .map(|col| {
            let v = eig.eigenvectors.column(col);
            let components = (0..dim)
                .filter(|&r| v[r].norm() > COEFF_EPS)
                .map(|r| PlaneWave {
                    k: ks[r / 2],
                    spin: if r % 2 == 0 { 1 } else { -1 },
                    coeff: v[r],
                })
                .collect();
            SpinorOrbital {
                energy: eig.eigenvalues[col],
                components,
            }
        })
        .collect())
}

/// Ground-state energy of `n` noninteracting electrons, the filled levels and
/// the energy at each cutoff tried.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceReport {
    pub energy: f64,
    pub levels: Vec<f64>,
    pub cutoff_energies: Vec<(usize, f64)>,
}

/// Lowest `n` orbitals, increasing the cutoff until their energy sum is stable.
fn converged_orbitals(
    spec: &HamiltonianSpec,
    n: usize,
    opts: &ReferenceOptions,
) -> Result<(Vec<SpinorOrbital>, Vec<(usize, f64)>)> {
    let mut history: Vec<(usize, f64)> = Vec::new();
    let mut last_change = f64::INFINITY;
    for cutoff in opts.initial_cutoff.max(1)..=opts.max_cutoff {
        let orbs = single_particle_spectrum(spec, cutoff)?;
        if orbs.len() < n {
            continue;
        }
        let e: f64 = orbs[..n].iter().map(|o| o.energy).sum();
        let prev = history.last().map(|h| h.1);
        history.push((cutoff, e));
        if let Some(p) = prev {
            last_change = (e - p).abs();
            if last_change < opts.tolerance {
                return Ok((orbs.into_iter().take(n).collect(), history));
            }
        }
    }
    Err(VmcError::Numerical(format!(
        "plane-wave reference not converged at cutoff {} (last change {last_change:e})",
        opts.max_cutoff
    )))
}

/// Sum of the `n` lowest single-particle levels of a noninteracting
/// Hamiltonian.
pub fn exact_reference_energy(spec: &HamiltonianSpec, n: usize) -> Result<f64> {
    exact_reference_energy_with(spec, n, &ReferenceOptions::default())
}

pub fn exact_reference_energy_with(
    spec: &HamiltonianSpec,
    n: usize,
    opts: &ReferenceOptions,
) -> Result<f64> {
    Ok(reference_report(spec, n, opts)?.energy)
}

pub fn reference_report(
    spec: &HamiltonianSpec,
    n: usize,
    opts: &ReferenceOptions,
) -> Result<ReferenceReport> {
    if n == 0 {
        if spec.is_interacting() {
            return Err(VmcError::Unsupported(
                "no exact reference for interacting Hamiltonians".into(),
            ));
        }
        return Ok(ReferenceReport {
            energy: 0.0,
            levels: Vec::new(),
            cutoff_energies: Vec::new(),
        });
    }
    let (orbs, cutoff_energies) = converged_orbitals(spec, n, opts)?;
    let levels: Vec<f64> = orbs.iter().map(|o| o.energy).collect();
    Ok(ReferenceReport {
        energy: levels.iter().sum(),
        levels,
        cutoff_energies,
    })
}

/// Lower and upper Rashba branches `p²/2 ∓ |p|`.
pub fn rashba_dispersion(p: [f64; 2]) -> [f64; 2] {
    let pn = p[0].hypot(p[1]);
    let kin = 0.5 * pn * pn;
    [kin - pn, kin + pn]
}

/// Spin-spiral branches `(p² + q²/4)/2 ∓ √(J² + (q·p)²/4)` with `p` measured
/// from the `q/2`-shifted origin.
pub fn spiral_dispersion(p: [f64; 2], q: [f64; 2], j: f64) -> [f64; 2] {
    let p2 = p[0] * p[0] + p[1] * p[1];
    let q2 = q[0] * q[0] + q[1] * q[1];
    let qp = q[0] * p[0] + q[1] * p[1];
    let root = (j * j + 0.25 * qp * qp).sqrt();
    let base = 0.5 * (p2 + 0.25 * q2);
    [base - root, base + root]
}

/// Slater determinant `det[φ_j(r_i, s_i)]` of spinor orbitals; an exact
/// eigenstate of the noninteracting Hamiltonian the orbitals came from.
#[derive(Clone, Debug)]
pub struct SpinorSlater {
    cell: SimulationBox,
    orbitals: Vec<SpinorOrbital>,
}

impl SpinorSlater {
    pub fn new(cell: SimulationBox, orbitals: Vec<SpinorOrbital>) -> Self {
        Self { cell, orbitals }
    }

    /// Determinant of the `n` lowest converged orbitals of `spec`.
    pub fn ground_state(spec: &HamiltonianSpec, n: usize) -> Result<Self> {
        Ok(Self::new(
            spec.cell,
            converged_orbitals(spec, n, &ReferenceOptions::default())?.0,
        ))
    }

    pub fn cell(&self) -> SimulationBox {
        self.cell
    }

    pub fn orbitals(&self) -> &[SpinorOrbital] {
        &self.orbitals
    }

    /// Eigenvalue of the determinant: sum of orbital energies.
    pub fn energy(&self) -> f64 {
        self.orbitals.iter().map(|o| o.energy).sum()
    }

    fn jets(
        &self,
        config: &ParticleConfiguration,
        coords: &[usize],
        lap: bool,
    ) -> Result<MatrixJets> {
        let n = self.orbitals.len();
        config.check_electrons(n)?;
        let zero = Complex64::new(0.0, 0.0);
        let mut value = vec![zero; n * n];
        let mut grad = vec![vec![zero; n * n]; coords.len()];
        let mut lapm = lap.then(|| vec![zero; n * n]);
        for i in 0..n {
            let (r, s) = (config.position(i), config.spin(i));
            for (j, orb) in self.orbitals.iter().enumerate() {
                let e = orb.eval(r, s);
                value[i * n + j] = e[0];
                for (d, &c) in coords.iter().enumerate() {
                    if c / 2 == i {
                        grad[d][i * n + j] = e[1 + c % 2];
                        if let Some(l) = lapm.as_mut() {
                            l[i * n + j] += e[3 + c % 2];
                        }
                    }
                }
            }
        }
        Ok(MatrixJets {
            n,
            value,
            grad,
            lap: lapm,
        })
    }
}

fn checked(z: Complex64) -> Result<LogAmplitude> {
    let lp = LogAmplitude::from_complex(z);
    if !(lp.log_abs > DEGENERATE_LOG_ABS) || !lp.log_abs.is_finite() {
        return Err(VmcError::DegenerateAmplitude);
    }
    Ok(lp)
}

impl Wavefunction for SpinorSlater {
    fn n_electrons(&self) -> usize {
        self.orbitals.len()
    }

    fn log_psi(&self, config: &ParticleConfiguration) -> Result<LogAmplitude> {
        let m = self.jets(config, &[], false)?;
        let lu = ComplexLu::new(&m.value, m.n).ok_or(VmcError::DegenerateAmplitude)?;
        checked(lu.log_det())
    }

    fn spatial_derivatives(&self, config: &ParticleConfiguration) -> Result<DerivativeBundle> {
        let coords: Vec<usize> = (0..2 * self.orbitals.len()).collect();
        let m = self.jets(config, &coords, true)?;
        let j = log_det_jets(&m).ok_or(VmcError::DegenerateAmplitude)?;
        Ok(DerivativeBundle {
            log_psi: checked(j.log_det)?,
            grad: j.grad,
            laplacian: j.lap,
        })
    }

    fn electron_gradient(
        &self,
        config: &ParticleConfiguration,
        i: usize,
    ) -> Result<(LogAmplitude, [Complex64; 2])> {
        let m = self.jets(config, &[2 * i, 2 * i + 1], false)?;
        let j = log_det_jets(&m).ok_or(VmcError::DegenerateAmplitude)?;
        Ok((checked(j.log_det)?, [j.grad[0], j.grad[1]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::RASHBA_KAPPA;

    fn spec(kind: HamiltonianKind) -> HamiltonianSpec {
        HamiltonianSpec {
            kind,
            cell: SimulationBox::square(6.0),
        }
    }

    /// Independent enumeration: fill the lowest branch energies over a
    /// momentum grid directly from the closed-form dispersions.
    fn filled(mut levels: Vec<f64>, n: usize) -> f64 {
        levels.sort_by(f64::total_cmp);
        levels[..n].iter().sum()
    }

    #[test]
    fn free_gas_fillings() {
        let s = spec(HamiltonianKind::FreeGas);
        let b = 2.0 * PI / 6.0;
        assert!(exact_reference_energy(&s, 1).unwrap().abs() < 1e-12);
        assert!((exact_reference_energy(&s, 3).unwrap() - 0.5 * b * b).abs() < 1e-10);
        assert!((exact_reference_energy(&s, 5).unwrap() - 1.5 * b * b).abs() < 1e-10);
    }

    #[test]
    fn rashba_matches_dispersion_enumeration() {
        let s = spec(HamiltonianKind::Rashba {
            kappa: RASHBA_KAPPA,
        });
        let b = 2.0 * PI / 6.0;
        let mut levels = Vec::new();
        for m in -6..=6 {
            for n in -6..=6 {
                levels.extend(rashba_dispersion([m as f64 * b, n as f64 * b]));
            }
        }
        for n in 1..=8 {
            let e = exact_reference_energy(&s, n).unwrap();
            assert!((e - filled(levels.clone(), n)).abs() < 1e-9, "n = {n}");
        }
        assert!((rashba_dispersion([b, 0.0])[0] + 0.498_887).abs() < 1e-6);
        assert!((rashba_dispersion([b, b])[0] + 0.384_338).abs() < 1e-6);
        assert!((exact_reference_energy(&s, 5).unwrap() + 2.379_883).abs() < 1e-6);
    }

    #[test]
    fn spiral_matches_shifted_dispersion_enumeration() {
        let q = [2.0 * PI / 6.0, 0.0];
        let s = spec(HamiltonianKind::SpinSpiral { j: 1.0, q });
        let b = 2.0 * PI / 6.0;
        // Each pair {|k,↓⟩, |k − q,↑⟩} is a closed 2×2 block with
        // p = k − q/2.
        let mut levels = Vec::new();
        for m in -6..=6 {
            for n in -6..=6 {
                let p = [m as f64 * b - q[0] / 2.0, n as f64 * b - q[1] / 2.0];
                levels.extend(spiral_dispersion(p, q, 1.0));
            }
        }
        for n in 1..=5 {
            let e = exact_reference_energy(&s, n).unwrap();
            assert!((e - filled(levels.clone(), n)).abs() < 1e-9, "n = {n}");
        }
        let at_zero = spiral_dispersion([0.0, 0.0], q, 1.0)[0];
        assert!((at_zero + 0.862_92).abs() < 1e-5);
    }

    #[test]
    fn interacting_is_unsupported() {
        let s = spec(HamiltonianKind::HoneycombMoire {
            v0: 10.0,
            phi: PI,
            a_m: 1.0,
            r_s: 10.0,
        });
        assert!(matches!(
            exact_reference_energy(&s, 2),
            Err(VmcError::Unsupported(_))
        ));
    }

    #[test]
    fn slater_is_antisymmetric() {
        let s = spec(HamiltonianKind::Rashba {
            kappa: RASHBA_KAPPA,
        });
        let wf = SpinorSlater::ground_state(&s, 3).unwrap();
        let c = ParticleConfiguration::new(
            s.cell,
            vec![[0.3, 1.0], [2.0, 4.4], [5.1, 3.3]],
            vec![1, -1, -1],
        )
        .unwrap();
        let a = wf.log_psi(&c).unwrap();
        let mut sw = c.clone();
        sw.swap_electrons(0, 1);
        let b = wf.log_psi(&sw).unwrap();
        assert!((a.log_abs - b.log_abs).abs() < 1e-10);
        assert!(crate::diff::logdet::wrap_phase(b.phase - a.phase - PI).abs() < 1e-10);
    }
}
