//! Quick self-checks of the numerical core, run by `spinvmc check`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use crate::ansatz::{
    init_params, ModelGeometry, NetworkParams, ParticleConfiguration, SimulationBox,
};
use crate::diff::{eval_log_psi, eval_param_gradient, eval_spatial_derivatives, Wavefunction};
use crate::mcmc::propose_sector_swaps;
use crate::models::{
    Ewald, Hamiltonian, HamiltonianKind, HamiltonianSpec, SpinorSlater, RASHBA_KAPPA,
};
use crate::optimize::ClipWindow;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, worst: f64, tol: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: worst <= tol,
        detail: format!("worst {worst:.2e}, tolerance {tol:.0e}"),
    }
}

fn small_geometry(n: usize, l: f64) -> ModelGeometry {
    ModelGeometry {
        n_electrons: n,
        cell: SimulationBox::square(l),
        d_model: 8,
        d_attn: 4,
        d_attn_vals: 4,
        n_heads: 2,
        n_layers: 2,
        n_mlp_per_layer: 1,
        n_det: 2,
    }
}

fn random_config(rng: &mut ChaCha8Rng, cell: SimulationBox, n: usize) -> ParticleConfiguration {
    let pos = (0..n)
        .map(|_| {
            [
                rng.random_range(0.0..cell.lx),
                rng.random_range(0.0..cell.ly),
            ]
        })
        .collect();
    let spins = (0..n)
        .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
        .collect();
    ParticleConfiguration::new(cell, pos, spins).expect("valid random configuration")
}

fn rel(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

fn spatial_derivatives(
    params: &NetworkParams,
    rng: &mut ChaCha8Rng,
    trials: usize,
) -> [CheckOutcome; 2] {
    let cell = params.geometry().cell;
    let n = params.geometry().n_electrons;
    let h = 1e-3;
    let (mut worst_grad, mut worst_lap): (f64, f64) = (0.0, 0.0);
    for _ in 0..trials {
        let c = random_config(rng, cell, n);
        let (Ok(d), Ok(z)) = (
            eval_spatial_derivatives(params, &c),
            eval_log_psi(params, &c),
        ) else {
            continue;
        };
        let z = z.as_complex();
        // Phases are continuous over steps this small.
        let at = |k: usize, s: f64| {
            let mut x = c.clone();
            x.set_coordinate(k, c.coordinate(k) + s);
            eval_log_psi(params, &x).map(|l| {
                let v = l.as_complex();
                let dphi = (v.im - z.im + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU)
                    - std::f64::consts::PI;
                Complex64::new(v.re, z.im + dphi)
            })
        };
        let mut lap = Complex64::new(0.0, 0.0);
        let mut ok = true;
        for k in 0..2 * n {
            let (Ok(p2), Ok(p1), Ok(m1), Ok(m2)) =
                (at(k, 2.0 * h), at(k, h), at(k, -h), at(k, -2.0 * h))
            else {
                ok = false;
                break;
            };
            let grad = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
            worst_grad = worst_grad.max(rel(d.grad[k], grad));
            lap += (-p2 + 16.0 * p1 - 30.0 * z + 16.0 * m1 - m2) / (12.0 * h * h);
        }
        if ok {
            worst_lap = worst_lap.max(rel(d.laplacian, lap));
        }
    }
    [
        outcome("spatial gradient vs finite differences", worst_grad, 1e-5),
        outcome("Laplacian vs finite differences", worst_lap, 1e-5),
    ]
}

fn param_gradient(params: &NetworkParams, rng: &mut ChaCha8Rng, trials: usize) -> CheckOutcome {
    let cell = params.geometry().cell;
    let n = params.geometry().n_electrons;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let c = random_config(rng, cell, n);
        let Ok(g) = eval_param_gradient(params, &c) else {
            continue;
        };
        for _ in 0..8 {
            let k = rng.random_range(0..params.len());
            let at = |s: f64| {
                let mut p = params.clone();
                p.as_mut_slice()[k] += s;
                eval_log_psi(&p, &c).map(|l| l.log_abs)
            };
            let (Ok(a), Ok(b)) = (at(h), at(-h)) else {
                continue;
            };
            let fd = (a - b) / (2.0 * h);
            worst = worst.max((g.values[k].re - fd).abs() / fd.abs().max(1.0));
        }
    }
    outcome("parameter gradient vs finite differences", worst, 1e-5)
}

fn antisymmetry(params: &NetworkParams, rng: &mut ChaCha8Rng, trials: usize) -> CheckOutcome {
    let cell = params.geometry().cell;
    let n = params.geometry().n_electrons;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let c = random_config(rng, cell, n);
        let (i, j) = (0, 1 + rng.random_range(0..n - 1));
        let mut swapped = c.clone();
        swapped.swap_electrons(i, j);
        let (Ok(a), Ok(b)) = (params.log_psi(&c), params.log_psi(&swapped)) else {
            continue;
        };
        let ratio = a.ratio_to(&b);
        worst = worst.max((ratio + 1.0).norm());
    }
    outcome("pair exchange flips the sign", worst, 1e-10)
}

fn ewald_splitting(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let cell = SimulationBox::new(5.0, 3.5).expect("valid cell");
    let base = Ewald::new(cell);
    let pos: Vec<[f64; 2]> = (0..5)
        .map(|_| [rng.random_range(0.0..5.0), rng.random_range(0.0..3.5)])
        .collect();
    let e0 = base.energy(&pos);
    let worst = [0.6, 1.5, 2.5]
        .iter()
        .map(|f| (Ewald::with_alpha(cell, base.alpha() * f).energy(&pos) - e0).abs())
        .fold(0.0, f64::max);
    outcome(
        "Ewald energy independent of the splitting parameter",
        worst,
        1e-8,
    )
}

fn zero_variance(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let cell = SimulationBox::square(6.0);
    let mut worst: f64 = 0.0;
    for kind in [
        HamiltonianKind::FreeGas,
        HamiltonianKind::SpinSpiral {
            j: 1.0,
            q: [std::f64::consts::TAU / 6.0, 0.0],
        },
        HamiltonianKind::Rashba {
            kappa: RASHBA_KAPPA,
        },
    ] {
        let spec = HamiltonianSpec { kind, cell };
        let (Ok(slater), Ok(h)) = (SpinorSlater::ground_state(&spec, 3), Hamiltonian::new(spec))
        else {
            return CheckOutcome {
                name: "zero variance",
                passed: false,
                detail: "setup failed".into(),
            };
        };
        let e = slater.energy();
        for _ in 0..50 {
            let c = random_config(rng, cell, 3);
            if let Ok(b) = h.local_energy(&slater, &c) {
                worst = worst.max((b.total() - e).norm() / e.abs().max(1.0));
            }
        }
    }
    outcome(
        "exact Slater states have constant local energy",
        worst,
        1e-8,
    )
}

fn sector_conservation(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let cell = SimulationBox::square(4.0);
    let mut c = random_config(rng, cell, 6);
    let m = c.magnetization();
    let mut violations = 0;
    for _ in 0..10_000 {
        c = propose_sector_swaps(&c, 0.3, rng);
        violations += usize::from(c.magnetization() != m);
    }
    CheckOutcome {
        name: "sector-preserving swaps conserve magnetization",
        passed: violations == 0,
        detail: format!("{violations} violations in 10000 proposals"),
    }
}

fn clipping_and_config(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let v: Vec<f64> = (0..200)
        .map(|_| rng.random_range(-1.0..1.0f64).powi(7) * 100.0)
        .collect();
    let w = ClipWindow::from_values(&v, 5.0);
    let once = w.apply(&v);
    let clip_ok = w.apply(&once) == once;
    let cfg = RunConfig::rashba_preset(5, 6.0);
    let config_ok = RunConfig::from_toml(&cfg.to_toml())
        .map(|c| c == cfg)
        .unwrap_or(false);
    CheckOutcome {
        name: "clipping idempotent and config round trip",
        passed: clip_ok && config_ok,
        detail: format!("clipping {clip_ok}, config {config_ok}"),
    }
}

/// Runs every check with a fixed seed.
pub fn run_checks() -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let params = init_params(&small_geometry(3, 4.0), 7).expect("valid geometry");
    let mut out = spatial_derivatives(&params, &mut rng, 10).to_vec();
    out.extend([
        param_gradient(&params, &mut rng, 10),
        antisymmetry(&params, &mut rng, 200),
        ewald_splitting(&mut rng),
        zero_variance(&mut rng),
        sector_conservation(&mut rng),
        clipping_and_config(&mut rng),
    ]);
    out
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_checks() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
