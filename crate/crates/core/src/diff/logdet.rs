//! Complex log-determinants with phase tracking, their coordinate jets, and
//! the phase-aware log-sum-exp that combines several determinants.

use num_complex::Complex64;

use super::DEGENERATE_LOG_ABS;
use crate::error::{Result, VmcError};

/// LU factorization with partial pivoting of a dense complex `n × n` matrix.
#[derive(Clone, Debug)]
pub struct ComplexLu {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
    odd: bool,
}

impl ComplexLu {
    /// Factorizes a row-major matrix. `None` when a pivot is exactly zero or
    /// non-finite.
    pub fn new(a: &[Complex64], n: usize) -> Option<Self> {
        assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut odd = false;
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|r| (r, lu[r * n + k].norm()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax == 0.0 || !pmax.is_finite() {
                return None;
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
                odd = !odd;
            }
            let inv = lu[k * n + k].inv();
            for r in k + 1..n {
                let f = lu[r * n + k] * inv;
                lu[r * n + k] = f;
                if f != Complex64::new(0.0, 0.0) {
                    for c in k + 1..n {
                        let u = lu[k * n + c];
                        lu[r * n + c] -= f * u;
                    }
                }
            }
        }
        Some(Self { n, lu, perm, odd })
    }

    /// `log det` as `ln|det| + i·arg(det)`, phase wrapped to `(-π, π]`.
    pub fn log_det(&self) -> Complex64 {
        let n = self.n;
        let mut log_abs = 0.0;
        let mut phase = if self.odd { std::f64::consts::PI } else { 0.0 };
        for k in 0..n {
            let u = self.lu[k * n + k];
            log_abs += u.norm().ln();
            phase += u.arg();
        }
        Complex64::new(log_abs, wrap_phase(phase))
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = self.n;
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let mut s = x[r];
            for c in 0..r {
                s -= self.lu[r * n + c] * x[c];
            }
            x[r] = s;
        }
        for r in (0..n).rev() {
            let mut s = x[r];
            for c in r + 1..n {
                s -= self.lu[r * n + c] * x[c];
            }
            x[r] = s / self.lu[r * n + r];
        }
        b.copy_from_slice(&x);
    }

    /// Row-major inverse.
    pub fn inverse(&self) -> Vec<Complex64> {
        let n = self.n;
        let mut inv = vec![Complex64::new(0.0, 0.0); n * n];
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            col[j] = Complex64::new(1.0, 0.0);
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        inv
    }
}

pub fn wrap_phase(phase: f64) -> f64 {
    use std::f64::consts::PI;
    let p = (phase + PI).rem_euclid(2.0 * PI) - PI;
    if p <= -PI {
        p + 2.0 * PI
    } else {
        p
    }
}

/// Entries, coordinate derivatives, and coordinate Laplacians of a complex
/// `n × n` matrix: `grad[c]` is `∂M/∂x_c` (row-major), `lap` is `Σ_c ∂²M/∂x_c²`.
#[derive(Clone, Debug)]
pub struct MatrixJets {
    pub n: usize,
    pub value: Vec<Complex64>,
    pub grad: Vec<Vec<Complex64>>,
    pub lap: Option<Vec<Complex64>>,
}

/// `log det M` with its derivative jets.
#[derive(Clone, Debug)]
pub struct LogDetJets {
    pub log_det: Complex64,
    pub grad: Vec<Complex64>,
    pub lap: Complex64,
    /// `M⁻¹`, row-major; reused by the reverse pass.
    pub inverse: Vec<Complex64>,
}

/// `∂ log det M = tr(M⁻¹ ∂M)` and
/// `∂² log det M = tr(M⁻¹ ∂²M) − tr((M⁻¹ ∂M)²)`, summed over directions for
/// the Laplacian. `None` for an exactly singular matrix.
pub fn log_det_jets(m: &MatrixJets) -> Option<LogDetJets> {
    let n = m.n;
    let lu = ComplexLu::new(&m.value, n)?;
    let log_det = lu.log_det();
    let inverse = lu.inverse();
    let zero = Complex64::new(0.0, 0.0);
    let mut grad = Vec::with_capacity(m.grad.len());
    let mut lap = zero;
    let mut b = vec![zero; n * n];
    for dm in &m.grad {
        // B = M⁻¹ ∂M
        for i in 0..n {
            for j in 0..n {
                let mut s = zero;
                for k in 0..n {
                    s += inverse[i * n + k] * dm[k * n + j];
                }
                b[i * n + j] = s;
            }
        }
        let tr: Complex64 = (0..n).map(|i| b[i * n + i]).sum();
        grad.push(tr);
        if m.lap.is_some() {
            let mut tr2 = zero;
            for i in 0..n {
                for j in 0..n {
                    tr2 += b[i * n + j] * b[j * n + i];
                }
            }
            lap -= tr2;
        }
    }
    if let Some(lm) = &m.lap {
        for i in 0..n {
            for k in 0..n {
                lap += inverse[i * n + k] * lm[k * n + i];
            }
        }
    }
    Some(LogDetJets {
        log_det,
        grad,
        lap,
        inverse,
    })
}

/// Result of combining determinant terms: `log Σ_m D_m`, its jets, and the
/// weights `D_m / Σ D` used by the reverse pass (zero for singular terms).
#[derive(Clone, Debug)]
pub struct SumJets {
    pub log_psi: Complex64,
    pub grad: Vec<Complex64>,
    pub lap: Complex64,
    pub weights: Vec<Complex64>,
}

/// Log-sum-exp over complex log-determinants with phases. Singular terms are
/// passed as `None` and contribute nothing.
pub fn combine_determinants(terms: &[Option<LogDetJets>], n_dir: usize) -> Result<SumJets> {
    let zero = Complex64::new(0.0, 0.0);
    let max = terms
        .iter()
        .flatten()
        .map(|t| t.log_det.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(VmcError::DegenerateAmplitude);
    }
    let scaled: Complex64 = terms
        .iter()
        .flatten()
        .map(|t| (t.log_det - max).exp())
        .sum();
    if scaled.norm() == 0.0 || !scaled.norm().is_finite() {
        return Err(VmcError::DegenerateAmplitude);
    }
    let log_psi = Complex64::new(max, 0.0) + scaled.ln();
    if !(log_psi.re > DEGENERATE_LOG_ABS) || !log_psi.re.is_finite() {
        return Err(VmcError::DegenerateAmplitude);
    }
    let weights: Vec<Complex64> = terms
        .iter()
        .map(|t| t.as_ref().map_or(zero, |t| (t.log_det - log_psi).exp()))
        .collect();
    let mut grad = vec![zero; n_dir];
    let mut lap = zero;
    for (t, w) in terms.iter().zip(&weights) {
        let Some(t) = t else { continue };
        let mut gg = zero;
        for (c, g) in t.grad.iter().enumerate() {
            grad[c] += w * g;
            gg += g * g;
        }
        lap += w * (t.lap + gg);
    }
    let gg: Complex64 = grad.iter().map(|g| g * g).sum();
    lap -= gg;
    Ok(SumJets {
        log_psi,
        grad,
        lap,
        weights,
    })
}
