//! Stochastic reconfiguration: solve `(S + λI) δ = g` with
//! `S = Re cov(O)` using matrix-free conjugate gradients.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Result of a conjugate-gradient solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SrOutcome {
    pub direction: Vec<f64>,
    pub iterations: usize,
    /// Final `‖r‖ / ‖g‖`.
    pub residual: f64,
    pub converged: bool,
}

fn column_means(rows: &[Vec<Complex64>], p: usize) -> Vec<Complex64> {
    let mut m = vec![Complex64::new(0.0, 0.0); p];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    let n = rows.len().max(1) as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

/// `S v = (1/n) Re Σ_s (O_s − Ō)* ((O_s − Ō) · v)` without forming `S`.
fn s_times(rows: &[Vec<Complex64>], mean: &[Complex64], v: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for r in rows {
        let u: Complex64 = r
            .iter()
            .zip(mean)
            .zip(v)
            .map(|((o, m), x)| (o - m) * x)
            .sum();
        for ((o, m), y) in r.iter().zip(mean).zip(out.iter_mut()) {
            *y += ((o - m).conj() * u).re;
        }
    }
    let n = rows.len().max(1) as f64;
    out.iter_mut().for_each(|y| *y /= n);
}

/// `δᵀ S δ` for the batch covariance.
pub(crate) fn fisher_quadratic(delta: &[f64], rows: &[Vec<Complex64>]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mean = column_means(rows, delta.len());
    let mut sd = vec![0.0; delta.len()];
    s_times(rows, &mean, delta, &mut sd);
    delta.iter().zip(&sd).map(|(a, b)| a * b).sum()
}

/// Conjugate gradients on `(S + λI) δ = g`, stopping at `‖r‖ ≤ tol ‖g‖`.
pub fn sr_precondition(
    grad: &[f64],
    log_derivs: &[Vec<Complex64>],
    damping: f64,
    tolerance: f64,
    max_iter: usize,
) -> SrOutcome {
    let p = grad.len();
    let mean = column_means(log_derivs, p);
    let apply = |v: &[f64], out: &mut [f64]| {
        s_times(log_derivs, &mean, v, out);
        for (o, x) in out.iter_mut().zip(v) {
            *o += damping * x;
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let gnorm = dot(grad, grad).sqrt();
    let mut x = vec![0.0; p];
    if gnorm == 0.0 {
        return SrOutcome {
            direction: x,
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    let mut r = grad.to_vec();
    let mut d = r.clone();
    let mut ad = vec![0.0; p];
    let mut rr = dot(&r, &r);
    for it in 1..=max_iter {
        apply(&d, &mut ad);
        let alpha = rr / dot(&d, &ad);
        for i in 0..p {
            x[i] += alpha * d[i];
            r[i] -= alpha * ad[i];
        }
        let rr_next = dot(&r, &r);
        let residual = rr_next.sqrt() / gnorm;
        if residual <= tolerance {
            return SrOutcome {
                direction: x,
                iterations: it,
                residual,
                converged: true,
            };
        }
        if !residual.is_finite() {
            return SrOutcome {
                direction: x,
                iterations: it,
                residual,
                converged: false,
            };
        }
        let beta = rr_next / rr;
        for i in 0..p {
            d[i] = r[i] + beta * d[i];
        }
        rr = rr_next;
    }
    SrOutcome {
        direction: x,
        iterations: max_iter,
        residual: (rr.sqrt()) / gnorm,
        converged: false,
    }
}

/// Forms `S` explicitly and solves by Cholesky. For small networks and tests.
pub fn sr_precondition_dense(
    grad: &[f64],
    log_derivs: &[Vec<Complex64>],
    damping: f64,
) -> Option<Vec<f64>> {
    let p = grad.len();
    let n = log_derivs.len().max(1) as f64;
    let mean = column_means(log_derivs, p);
    let mut s = DMatrix::<f64>::identity(p, p) * damping;
    for r in log_derivs {
        let c: Vec<Complex64> = r.iter().zip(&mean).map(|(o, m)| o - m).collect();
        for a in 0..p {
            for b in 0..p {
                s[(a, b)] += (c[a].conj() * c[b]).re / n;
            }
        }
    }
    let chol = s.cholesky()?;
    Some(
        chol.solve(&DVector::from_column_slice(grad))
            .as_slice()
            .to_vec(),
    )
}
