use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ansatz::{init_params, tiny_geometry, ParamLayout, SimulationBox};
use crate::diff::eval_param_gradient;
use crate::models::{HamiltonianKind, HamiltonianSpec, RASHBA_KAPPA};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn clipping_examples() {
    let v = [0.0, 0.0, 0.0, 0.0, 100.0];
    assert_eq!(clip_real(&v, 5.0), v.to_vec());
    assert_eq!(clip_real(&[3.0; 6], 5.0), vec![3.0; 6]);
    // median 2, D = (2+1+0+1+998)/5 = 200.4, upper bound 2 + 200.4
    let clipped = clip_real(&[0.0, 1.0, 2.0, 3.0, 1000.0], 1.0);
    assert_eq!(clipped[..4], [0.0, 1.0, 2.0, 3.0]);
    assert_relative_eq!(clipped[4], 202.4, epsilon = 1e-12);
}

#[test]
fn complex_clipping_treats_parts_separately() {
    let v = [
        c(0.0, 0.0),
        c(0.0, 1.0),
        c(0.0, 2.0),
        c(0.0, 3.0),
        c(1000.0, 0.0),
    ];
    let out = clip_local_energies(&v, 1.0);
    // re: median 0, D = 200; im: median 1, D = 1
    assert_relative_eq!(out[4].re, 200.0, epsilon = 1e-12);
    assert_eq!(out[3].im, 2.0);
    assert_eq!(out[1].im, 1.0);
}

#[test]
fn single_outlier_moves_to_window_edge() {
    let mut v: Vec<f64> = (0..1024).map(|i| 1e-3 * ((i % 7) as f64 - 3.0)).collect();
    v[100] = 1e6;
    let w = ClipWindow::from_values(&v, 5.0);
    let out = clip_real(&v, 5.0);
    assert_eq!(out[100], w.hi);
    assert!(w.hi < 1e4);
    assert_eq!(out[..100], v[..100]);
}

#[test]
fn re_estimating_the_window_can_tighten_it() {
    let v = [0.0, 0.0, 0.0, 0.0, 100.0];
    let once = clip_real(&v, 1.0);
    assert_eq!(once[4], 20.0);
    assert_eq!(clip_real(&once, 1.0)[4], 4.0);
}

proptest! {
    #[test]
    fn clipping_to_a_window_is_idempotent(v in prop::collection::vec(-1e3f64..1e3, 1..60), rho in 0.1f64..10.0) {
        let w = ClipWindow::from_values(&v, rho);
        let once = w.apply(&v);
        prop_assert_eq!(&once, &clip_real(&v, rho));
        prop_assert_eq!(w.apply(&once), once);
    }

    #[test]
    fn wide_windows_leave_values_alone(v in prop::collection::vec(-1e3f64..1e3, 1..60)) {
        prop_assert_eq!(clip_real(&v, 1e12), v);
    }
}

#[test]
fn schedule() {
    assert_eq!(lr_schedule(0.02, 1e5, 0), 0.02);
    assert_relative_eq!(lr_schedule(0.02, 1e5, 100_000), 0.01);
}

fn random_rows(n: usize, p: usize, seed: u64) -> Vec<Vec<Complex64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (0..p)
                .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect()
        })
        .collect()
}

fn random_vec(p: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn sr_with_zero_covariance_divides_by_damping() {
    let row: Vec<Complex64> = (0..7).map(|k| c(k as f64, -1.0)).collect();
    let rows = vec![row; 10];
    let g = random_vec(7, 1);
    let out = sr_precondition(&g, &rows, 1e-3, 1e-8, 100);
    assert!(out.converged);
    for (d, gk) in out.direction.iter().zip(&g) {
        assert_relative_eq!(*d, gk / 1e-3, max_relative = 1e-8);
    }
}

#[test]
fn conjugate_gradient_matches_dense_solve() {
    for (n, p, seed) in [(40, 30, 3), (64, 200, 4), (300, 120, 5)] {
        let rows = random_rows(n, p, seed);
        let g = random_vec(p, seed + 100);
        let cg = sr_precondition(&g, &rows, 1e-3, 1e-10, 5000);
        assert!(
            cg.converged,
            "{} iterations, residual {}",
            cg.iterations, cg.residual
        );
        let dense = sr_precondition_dense(&g, &rows, 1e-3).unwrap();
        let scale = dense.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in cg.direction.iter().zip(&dense) {
            assert!((a - b).abs() <= 1e-6 * scale, "{a} vs {b}");
        }
    }
}

#[test]
fn cg_reports_non_convergence() {
    let rows = random_rows(64, 120, 9);
    let g = random_vec(120, 10);
    let out = sr_precondition(&g, &rows, 1e-6, 1e-12, 2);
    assert!(!out.converged);
    assert_eq!(out.iterations, 2);
}

fn small_layout() -> ParamLayout {
    ParamLayout::new(&tiny_geometry(1, 2.0))
}

#[test]
fn kfac_identity_factors() {
    let layout = small_layout();
    let blocks = layout
        .blocks()
        .iter()
        .map(|b| {
            BlockFactor::identity(b.weight.cols + usize::from(b.bias.is_some()), b.weight.rows)
        })
        .collect();
    let state = KfacState::with_blocks(0.95, blocks);
    let g = random_vec(layout.len(), 2);
    let damping = 1e-2;
    let d = kfac_precondition(&g, &layout, &state, damping, f64::INFINITY).unwrap();
    let eps = damping.sqrt();
    for (a, b) in d.iter().zip(&g) {
        assert_relative_eq!(*a, b / (1.0 + eps).powi(2), max_relative = 1e-12);
    }
}

#[test]
fn kfac_norm_constraint_binds_with_equality() {
    let layout = small_layout();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let blocks = layout
        .blocks()
        .iter()
        .map(|b| {
            let (di, d_o) = (b.weight.cols + usize::from(b.bias.is_some()), b.weight.rows);
            BlockFactor {
                in_dim: di,
                out_dim: d_o,
                a: random_spd(di, &mut rng),
                g: random_spd(d_o, &mut rng),
            }
        })
        .collect();
    let state = KfacState::with_blocks(0.95, blocks);
    let g = random_vec(layout.len(), 4);
    let free = kfac_precondition(&g, &layout, &state, 1e-3, f64::INFINITY).unwrap();
    let q = kfac_quadratic(&free, &layout, &state);
    let c = 1e-3 * q;
    let d = kfac_precondition(&g, &layout, &state, 1e-3, c).unwrap();
    assert_relative_eq!(kfac_quadratic(&d, &layout, &state), c, max_relative = 1e-3);
    let loose = kfac_precondition(&g, &layout, &state, 1e-3, 10.0 * q).unwrap();
    assert_eq!(loose, free);
}

/// Row-major `B Bᵀ / d` for a random `B`.
fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let b: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = (0..d).map(|k| b[i * d + k] * b[j * d + k]).sum::<f64>() / d as f64;
        }
    }
    m
}

/// `Σ_b vec(δ_b)ᵀ (G ⊗ A) vec(δ_b)` computed by direct summation.
fn kfac_quadratic(delta: &[f64], layout: &ParamLayout, state: &KfacState) -> f64 {
    let mut q = 0.0;
    for (spec, f) in layout.blocks().iter().zip(state.blocks().unwrap()) {
        let (out, inw, d) = (spec.weight.rows, spec.weight.cols, f.in_dim);
        let x = |r: usize, c: usize| {
            if c < inw {
                delta[spec.weight.offset + r * inw + c]
            } else {
                delta[spec.bias.unwrap().offset + r]
            }
        };
        for r in 0..out {
            for s in 0..out {
                for a in 0..d {
                    for b in 0..d {
                        q += x(r, a) * f.g[r * out + s] * f.a[a * d + b] * x(s, b);
                    }
                }
            }
        }
    }
    q
}

#[test]
fn bias_curvature_matches_exact_covariance() {
    // One electron means one token, and the bias input is the constant 1, so
    // the Kronecker product is exact on the bias diagonal: G_rr · 1 = S_bb.
    let l = 2.5;
    let params = init_params(&tiny_geometry(1, l), 13).unwrap();
    let configs = random_configs(1, l, 40, 14);
    let retain = Retain {
        log_derivs: true,
        records: true,
    };
    let (_, samples) = energy_and_gradient(&params, &rashba(l), &configs, 5.0, retain).unwrap();
    let f = KfacFactors::from_records(params.layout(), &samples.records).unwrap();
    let n = samples.log_derivs.len() as f64;
    let mut checked = 0;
    for (spec, b) in params.layout().blocks().iter().zip(&f.blocks) {
        let Some(bias) = spec.bias else { continue };
        let d = b.in_dim;
        assert_relative_eq!(b.a[d * d - 1], 1.0, epsilon = 1e-14);
        for r in 0..b.out_dim {
            let k = bias.offset + r;
            let mean: Complex64 = samples.log_derivs.iter().map(|o| o[k]).sum::<Complex64>() / n;
            let s = samples
                .log_derivs
                .iter()
                .map(|o| (o[k] - mean).norm_sqr())
                .sum::<f64>()
                / n;
            assert_relative_eq!(
                b.g[r * b.out_dim + r],
                s,
                max_relative = 1e-9,
                epsilon = 1e-14
            );
            checked += 1;
        }
    }
    assert!(checked > 0);
}

fn rashba(l: f64) -> Hamiltonian {
    Hamiltonian::new(HamiltonianSpec {
        kind: HamiltonianKind::Rashba {
            kappa: RASHBA_KAPPA,
        },
        cell: SimulationBox::square(l),
    })
    .unwrap()
}

fn random_configs(n: usize, l: f64, count: usize, seed: u64) -> Vec<ParticleConfiguration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let pos = (0..n)
                .map(|_| [rng.random_range(0.0..l), rng.random_range(0.0..l)])
                .collect();
            let spins = (0..n)
                .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
                .collect();
            ParticleConfiguration::new(SimulationBox::square(l), pos, spins).unwrap()
        })
        .collect()
}

#[test]
fn factors_are_symmetric_and_semidefinite() {
    let l = 3.0;
    let params = init_params(&tiny_geometry(2, l), 5).unwrap();
    let h = rashba(l);
    let configs = random_configs(2, l, 24, 6);
    let retain = Retain {
        log_derivs: false,
        records: true,
    };
    let (_, samples) = energy_and_gradient(&params, &h, &configs, 5.0, retain).unwrap();
    let f = KfacFactors::from_records(params.layout(), &samples.records).unwrap();
    assert_eq!(f.blocks.len(), params.layout().blocks().len());
    for b in &f.blocks {
        for (m, d) in [(&b.a, b.in_dim), (&b.g, b.out_dim)] {
            let mat = nalgebra::DMatrix::from_row_slice(d, d, m);
            assert!((&mat - mat.transpose()).abs().max() < 1e-12);
            let min = mat.clone().symmetric_eigen().eigenvalues.min();
            assert!(min > -1e-10 * mat.abs().max().max(1.0), "{min}");
        }
    }
}

#[test]
fn batch_estimate_matches_uniform_weights() {
    let l = 3.0;
    let params = init_params(&tiny_geometry(2, l), 11).unwrap();
    let h = rashba(l);
    let configs = random_configs(2, l, 20, 12);
    let retain = Retain {
        log_derivs: true,
        records: false,
    };
    let (est, samples) = energy_and_gradient(&params, &h, &configs, 1e9, retain).unwrap();
    let energies: Vec<Complex64> = configs
        .iter()
        .map(|c| h.local_energy(&params, c).unwrap().total())
        .collect();
    let rows: Vec<Vec<Complex64>> = configs
        .iter()
        .map(|c| eval_param_gradient(&params, c).unwrap().values)
        .collect();
    let reference = weighted_estimate(&energies, &rows, &vec![1.0; rows.len()]);
    assert_relative_eq!(est.energy_mean, reference.energy_mean, max_relative = 1e-12);
    assert_relative_eq!(
        est.energy_stderr,
        reference.energy_stderr,
        max_relative = 1e-10
    );
    for (a, b) in est.grad.iter().zip(&reference.grad) {
        assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
    }
    assert_eq!(samples.log_derivs, rows);
    assert_eq!(est.n_samples, 20);
}

#[test]
fn invalid_batch_is_aborted() {
    let l = 3.0;
    let params = NetworkParams::zeros(tiny_geometry(2, l)).unwrap();
    let configs = random_configs(2, l, 10, 1);
    let err =
        energy_and_gradient(&params, &rashba(l), &configs, 5.0, Retain::default()).unwrap_err();
    assert!(matches!(err, VmcError::Numerical(_)));
}

#[test]
fn non_finite_update_is_skipped() {
    let mut params = init_params(&tiny_geometry(1, 2.0), 1).unwrap();
    let before = params.clone();
    let mut d = vec![0.0; params.len()];
    d[3] = f64::NAN;
    assert!(apply_update(&mut params, &d, 0.1).is_err());
    assert_eq!(params, before);
    d[3] = 1.0;
    apply_update(&mut params, &d, 0.1).unwrap();
    assert_relative_eq!(params.as_slice()[3], before.as_slice()[3] - 0.1);
    assert!(apply_update(&mut params, &d[1..], 0.1).is_err());
}

/// One electron on a `m × m` grid for both spins: energies, log-derivatives
/// and quadrature weights `|Ψ|²`.
fn quadrature_batch(
    params: &NetworkParams,
    h: &Hamiltonian,
    l: f64,
    m: usize,
) -> (Vec<Complex64>, Vec<Vec<Complex64>>, Vec<f64>) {
    let mut e = Vec::new();
    let mut o = Vec::new();
    let mut w = Vec::new();
    let step = l / m as f64;
    for i in 0..m {
        for j in 0..m {
            for s in [1i8, -1] {
                let cfg = ParticleConfiguration::new(
                    SimulationBox::square(l),
                    vec![[i as f64 * step, j as f64 * step]],
                    vec![s],
                )
                .unwrap();
                let (lp, g, _) = param_gradient_with_records(params, &cfg, false).unwrap();
                e.push(h.local_energy(params, &cfg).unwrap().total());
                o.push(g.values);
                w.push((2.0 * lp.log_abs).exp());
            }
        }
    }
    (e, o, w)
}

fn quadrature_energy(params: &NetworkParams, h: &Hamiltonian, l: f64, m: usize) -> f64 {
    let (e, _, w) = quadrature_batch(params, h, l, m);
    e.iter().zip(&w).map(|(e, w)| e.re * w).sum::<f64>() / w.iter().sum::<f64>()
}

#[test]
fn gradient_matches_quadrature_energy_derivative() {
    let l = 2.5;
    // Quadrature error decays quickly with m: about 2e-5 relative at m = 60.
    let m = 96;
    let h = rashba(l);
    let params = init_params(&tiny_geometry(1, l), 21).unwrap();
    let (e, o, w) = quadrature_batch(&params, &h, l, m);
    let est = weighted_estimate(&e, &o, &w);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..3 {
        let dir: Vec<f64> = (0..params.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let analytic: f64 = est.grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let hstep = 1e-4;
        let shifted = |s: f64| {
            let mut p = params.clone();
            p.as_mut_slice()
                .iter_mut()
                .zip(&dir)
                .for_each(|(t, d)| *t += s * d);
            quadrature_energy(&p, &h, l, m)
        };
        let fd = (shifted(hstep) - shifted(-hstep)) / (2.0 * hstep);
        assert!(
            (analytic - fd).abs() <= 1e-5 * fd.abs().max(1.0),
            "{analytic} vs {fd}"
        );
    }
}

#[test]
fn two_gradient_steps_lower_the_frozen_energy() {
    let l = 2.5;
    let m = 24;
    let h = rashba(l);
    let mut params = init_params(&tiny_geometry(1, l), 31).unwrap();
    let mut energies = vec![quadrature_energy(&params, &h, l, m)];
    for _ in 0..2 {
        let (e, o, w) = quadrature_batch(&params, &h, l, m);
        let est = weighted_estimate(&e, &o, &w);
        apply_update(&mut params, &est.grad, 1e-3).unwrap();
        energies.push(quadrature_energy(&params, &h, l, m));
    }
    assert!(
        energies[1] < energies[0] && energies[2] < energies[1],
        "{energies:?}"
    );
}

#[test]
fn optimizer_methods_produce_finite_directions() {
    let l = 3.0;
    let params = init_params(&tiny_geometry(2, l), 41).unwrap();
    let h = rashba(l);
    let configs = random_configs(2, l, 32, 42);
    for method in [OptMethod::Sgd, OptMethod::Sr, OptMethod::Kfac] {
        let mut opt = Optimizer::new(OptimizerConfig {
            method,
            ..Default::default()
        })
        .unwrap();
        let (est, samples) = energy_and_gradient(&params, &h, &configs, 5.0, opt.retain()).unwrap();
        let d = opt.direction(&params, &est, &samples, 0.01).unwrap();
        assert_eq!(d.len(), params.len());
        assert!(d.iter().all(|v| v.is_finite()));
        // Descent direction: positive overlap with the gradient.
        let overlap: f64 = d.iter().zip(&est.grad).map(|(a, b)| a * b).sum();
        assert!(overlap > 0.0, "{method:?}");
    }
}

#[test]
fn config_validation() {
    assert!(OptimizerConfig::default().validate().is_ok());
    assert!(OptimizerConfig {
        damping: 0.0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(OptimizerConfig {
        kfac_decay: 1.0,
        ..Default::default()
    }
    .validate()
    .is_err());
}
