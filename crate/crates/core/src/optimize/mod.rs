//! Energy and gradient estimation from a walker batch, and the
//! preconditioned update rules (plain gradient, stochastic reconfiguration,
//! Kronecker-factored curvature).

mod kfac;
mod sr;

pub use kfac::{kfac_precondition, BlockFactor, KfacFactors, KfacState, EIGEN_FLOOR};
pub use sr::{sr_precondition, sr_precondition_dense, SrOutcome};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{NetworkParams, ParticleConfiguration};
use crate::diff::{param_gradient_with_records, LayerRecord};
use crate::error::{Result, VmcError};
use crate::models::Hamiltonian;

/// Steps are abandoned when more than this fraction of walkers fail.
pub const MAX_FLAGGED_FRACTION: f64 = 0.1;

/// Samples per deterministic reduction chunk.
const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptMethod {
    Sgd,
    Sr,
    Kfac,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: OptMethod,
    pub eta0: f64,
    pub t0: f64,
    pub rho: f64,
    pub damping: f64,
    pub norm_constraint: f64,
    /// Exponential decay of the running curvature factors.
    pub kfac_decay: f64,
    pub cg_tolerance: f64,
    pub cg_max_iter: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: OptMethod::Sr,
            eta0: 0.01,
            t0: 1e5,
            rho: 5.0,
            damping: 1e-3,
            norm_constraint: 1e-3,
            kfac_decay: 0.95,
            cg_tolerance: 1e-8,
            cg_max_iter: 1000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta0", self.eta0),
            ("t0", self.t0),
            ("rho", self.rho),
            ("damping", self.damping),
            ("norm_constraint", self.norm_constraint),
            ("cg_tolerance", self.cg_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(VmcError::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.kfac_decay) {
            return Err(VmcError::Config(format!(
                "kfac_decay must lie in [0, 1), got {}",
                self.kfac_decay
            )));
        }
        if self.cg_max_iter == 0 {
            return Err(VmcError::Config("cg_max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Batch estimate of the energy and its gradient in the real parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub energy_mean: f64,
    pub energy_stderr: f64,
    /// Sample variance of the clipped real local energies.
    pub variance: f64,
    /// Mean of the clipped imaginary parts; a diagnostic that should vanish.
    pub energy_imag_mean: f64,
    pub grad: Vec<f64>,
    pub n_samples: usize,
    pub n_flagged: usize,
}

/// `η0 / (1 + t/t0)`.
pub fn lr_schedule(eta0: f64, t0: f64, t: u64) -> f64 {
    eta0 / (1.0 + t as f64 / t0)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// The interval `median ± ρ·D`, with `D` the mean absolute deviation from
/// the median.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipWindow {
    pub lo: f64,
    pub hi: f64,
}

impl ClipWindow {
    pub fn from_values(values: &[f64], rho: f64) -> Self {
        if values.is_empty() {
            return Self {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            };
        }
        let m = median(values);
        let d = values.iter().map(|v| (v - m).abs()).sum::<f64>() / values.len() as f64;
        Self {
            lo: m - rho * d,
            hi: m + rho * d,
        }
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| v.clamp(self.lo, self.hi)).collect()
    }
}

/// Clamps to the window estimated from `values` itself.
pub fn clip_real(values: &[f64], rho: f64) -> Vec<f64> {
    ClipWindow::from_values(values, rho).apply(values)
}

/// Clips real and imaginary parts independently.
pub fn clip_local_energies(values: &[Complex64], rho: f64) -> Vec<Complex64> {
    let re = clip_real(&values.iter().map(|z| z.re).collect::<Vec<_>>(), rho);
    let im = clip_real(&values.iter().map(|z| z.im).collect::<Vec<_>>(), rho);
    re.into_iter()
        .zip(im)
        .map(|(r, i)| Complex64::new(r, i))
        .collect()
}

/// Weighted estimator without clipping:
/// `Ē = Σ w Re E / Σ w`, `g_k = 2 Re Σ w (E − Ē)* O_k / Σ w`.
/// Uniform weights give the Monte Carlo estimator; quadrature weights
/// `|Ψ|² dA` give the exact gradient of the integrated energy.
pub fn weighted_estimate(
    energies: &[Complex64],
    log_derivs: &[Vec<Complex64>],
    weights: &[f64],
) -> GradientEstimate {
    let n = energies.len();
    assert_eq!(log_derivs.len(), n);
    assert_eq!(weights.len(), n);
    let wsum: f64 = weights.iter().sum();
    let mean = energies
        .iter()
        .zip(weights)
        .map(|(e, w)| w * e.re)
        .sum::<f64>()
        / wsum;
    let imag = energies
        .iter()
        .zip(weights)
        .map(|(e, w)| w * e.im)
        .sum::<f64>()
        / wsum;
    let var = energies
        .iter()
        .zip(weights)
        .map(|(e, w)| w * (e.re - mean).powi(2))
        .sum::<f64>()
        / wsum;
    let p = log_derivs.first().map_or(0, Vec::len);
    let mut grad = vec![0.0; p];
    for ((e, o), w) in energies.iter().zip(log_derivs).zip(weights) {
        let c = (e - mean).conj() * *w;
        for (g, ok) in grad.iter_mut().zip(o) {
            *g += (c * ok).re;
        }
    }
    for g in &mut grad {
        *g *= 2.0 / wsum;
    }
    GradientEstimate {
        energy_mean: mean,
        energy_stderr: (var / n as f64).sqrt(),
        variance: var,
        energy_imag_mean: imag,
        grad,
        n_samples: n,
        n_flagged: 0,
    }
}

/// Everything a preconditioner may need from one batch.
#[derive(Clone, Debug, Default)]
pub struct BatchSamples {
    /// Clipped local energies of the walkers that were kept.
    pub local_energies: Vec<Complex64>,
    /// Per-sample `∂ log Ψ / ∂θ`, kept only when requested.
    pub log_derivs: Vec<Vec<Complex64>>,
    /// Per-sample dense-block records, kept only when requested.
    pub records: Vec<Vec<LayerRecord>>,
    /// Mean of the kept `∂ log Ψ / ∂θ`.
    pub mean_log_deriv: Vec<Complex64>,
}

/// What [`energy_and_gradient`] should keep beyond the estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Retain {
    pub log_derivs: bool,
    pub records: bool,
}

impl Retain {
    pub fn for_method(method: OptMethod) -> Self {
        Self {
            log_derivs: method == OptMethod::Sr,
            records: method == OptMethod::Kfac,
        }
    }
}

/// Local energies for every configuration, `None` where evaluation failed or
/// produced a non-finite value.
pub fn local_energies(
    params: &NetworkParams,
    h: &Hamiltonian,
    configs: &[ParticleConfiguration],
) -> Vec<Option<Complex64>> {
    configs
        .par_iter()
        .map(|c| match h.local_energy(params, c) {
            Ok(b) => {
                let e = b.total();
                (e.re.is_finite() && e.im.is_finite()).then_some(e)
            }
            Err(err) => {
                log::debug!("local energy failed: {err}");
                None
            }
        })
        .collect()
}

struct Partial {
    grad: Vec<Complex64>,
    o_sum: Vec<Complex64>,
    rows: Vec<Vec<Complex64>>,
    records: Vec<Vec<LayerRecord>>,
}

/// Estimates energy and gradient on a batch with clipped local energies.
/// Fails with [`VmcError::Numerical`] when more than 10% of walkers are
/// flagged; flagged walkers are otherwise dropped.
pub fn energy_and_gradient(
    params: &NetworkParams,
    h: &Hamiltonian,
    configs: &[ParticleConfiguration],
    rho: f64,
    retain: Retain,
) -> Result<(GradientEstimate, BatchSamples)> {
    let raw = local_energies(params, h, configs);
    let n_total = configs.len();
    let n_flagged = raw.iter().filter(|e| e.is_none()).count();
    if n_total == 0 || n_flagged as f64 > MAX_FLAGGED_FRACTION * n_total as f64 {
        return Err(VmcError::Numerical(format!(
            "{n_flagged} of {n_total} walkers produced invalid local energies"
        )));
    }
    let kept: Vec<(&ParticleConfiguration, Complex64)> = configs
        .iter()
        .zip(&raw)
        .filter_map(|(c, e)| e.map(|e| (c, e)))
        .collect();
    let energies = clip_local_energies(&kept.iter().map(|k| k.1).collect::<Vec<_>>(), rho);
    let n = kept.len();
    let mean = energies.iter().map(|e| e.re).sum::<f64>() / n as f64;
    let imag = energies.iter().map(|e| e.im).sum::<f64>() / n as f64;
    let var = energies.iter().map(|e| (e.re - mean).powi(2)).sum::<f64>() / n as f64;

    let p = params.len();
    let zero = Complex64::new(0.0, 0.0);
    let partials: Vec<Result<Partial>> = kept
        .par_chunks(CHUNK)
        .zip(energies.par_chunks(CHUNK))
        .map(|(chunk, es)| {
            let mut part = Partial {
                grad: vec![zero; p],
                o_sum: vec![zero; p],
                rows: Vec::new(),
                records: Vec::new(),
            };
            for ((config, _), e) in chunk.iter().zip(es) {
                let (_, o, recs) = param_gradient_with_records(params, config, retain.records)?;
                let c = (e - mean).conj();
                for ((g, s), ok) in part
                    .grad
                    .iter_mut()
                    .zip(part.o_sum.iter_mut())
                    .zip(&o.values)
                {
                    *g += c * ok;
                    *s += ok;
                }
                if retain.log_derivs {
                    part.rows.push(o.values);
                }
                if retain.records {
                    part.records.push(recs);
                }
            }
            Ok(part)
        })
        .collect();

    let mut grad = vec![zero; p];
    let mut o_sum = vec![zero; p];
    let mut samples = BatchSamples {
        local_energies: energies,
        ..Default::default()
    };
    for part in partials {
        let part = part?;
        for (g, x) in grad.iter_mut().zip(&part.grad) {
            *g += x;
        }
        for (s, x) in o_sum.iter_mut().zip(&part.o_sum) {
            *s += x;
        }
        samples.log_derivs.extend(part.rows);
        samples.records.extend(part.records);
    }
    samples.mean_log_deriv = o_sum.into_iter().map(|s| s / n as f64).collect();
    let estimate = GradientEstimate {
        energy_mean: mean,
        energy_stderr: (var / n as f64).sqrt(),
        variance: var,
        energy_imag_mean: imag,
        grad: grad.into_iter().map(|g| 2.0 * g.re / n as f64).collect(),
        n_samples: n,
        n_flagged,
    };
    Ok((estimate, samples))
}

/// `θ − η δ`; refuses non-finite results and leaves `params` untouched.
pub fn apply_update(params: &mut NetworkParams, direction: &[f64], eta: f64) -> Result<()> {
    if direction.len() != params.len() {
        return Err(VmcError::Dimension(format!(
            "update has {} entries, parameters have {}",
            direction.len(),
            params.len()
        )));
    }
    let next: Vec<f64> = params
        .as_slice()
        .iter()
        .zip(direction)
        .map(|(t, d)| t - eta * d)
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(VmcError::Numerical(
            "non-finite parameter update skipped".into(),
        ));
    }
    params.as_mut_slice().copy_from_slice(&next);
    Ok(())
}

/// Preconditioner state carried across steps.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    kfac: KfacState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        let kfac = KfacState::new(config.kfac_decay);
        Ok(Self { config, kfac })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn kfac_state(&self) -> &KfacState {
        &self.kfac
    }

    pub fn kfac_state_mut(&mut self) -> &mut KfacState {
        &mut self.kfac
    }

    pub fn retain(&self) -> Retain {
        Retain::for_method(self.config.method)
    }

    /// Update direction for a step of size `eta`. The norm constraint bounds
    /// the curvature norm of the actual step `η δ`.
    pub fn direction(
        &mut self,
        params: &NetworkParams,
        estimate: &GradientEstimate,
        samples: &BatchSamples,
        eta: f64,
    ) -> Result<Vec<f64>> {
        let c = self.config.norm_constraint / (eta * eta);
        match self.config.method {
            OptMethod::Sgd => Ok(estimate.grad.clone()),
            OptMethod::Sr => {
                let out = sr_precondition(
                    &estimate.grad,
                    &samples.log_derivs,
                    self.config.damping,
                    self.config.cg_tolerance,
                    self.config.cg_max_iter,
                );
                if !out.converged {
                    log::warn!(
                        "conjugate gradient stopped after {} iterations at residual {:.3e}; using the raw gradient",
                        out.iterations,
                        out.residual
                    );
                    return Ok(estimate.grad.clone());
                }
                let q = sr::fisher_quadratic(&out.direction, &samples.log_derivs);
                Ok(scale_to_constraint(out.direction, q, c))
            }
            OptMethod::Kfac => {
                let factors = KfacFactors::from_records(params.layout(), &samples.records)?;
                self.kfac.update(factors);
                kfac_precondition(
                    &estimate.grad,
                    params.layout(),
                    &self.kfac,
                    self.config.damping,
                    c,
                )
            }
        }
    }
}

/// Shrinks `δ` so that `δᵀF̂δ ≤ c`, given `q = δᵀF̂δ`.
pub(crate) fn scale_to_constraint(mut delta: Vec<f64>, q: f64, c: f64) -> Vec<f64> {
    if q > c && q.is_finite() {
        let s = (c / q).sqrt();
        for d in &mut delta {
            *d *= s;
        }
    }
    delta
}

#[cfg(test)]
mod tests;
