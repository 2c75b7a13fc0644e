//! Derivatives of `log Ψ`: coordinate gradients and Laplacians by forward
//! propagation of jets, and parameter gradients by a reverse pass.

mod forward;
pub mod jets;
pub mod logdet;
mod reverse;

pub(crate) use forward::forward;
pub(crate) use reverse::backward;
pub use reverse::LayerRecord;

use num_complex::Complex64;

use crate::ansatz::{NetworkParams, ParticleConfiguration};
use crate::error::Result;

/// `ln(1e-300)`: amplitudes at or below this magnitude count as zero.
pub const DEGENERATE_LOG_ABS: f64 = -690.775_527_898_213_7;

/// `log Ψ = log_abs + i·phase`, with `phase` in `(-π, π]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogAmplitude {
    pub log_abs: f64,
    pub phase: f64,
}

impl LogAmplitude {
    /// Amplitude exactly zero; always rejected by Metropolis.
    pub const ZERO: Self = Self {
        log_abs: f64::NEG_INFINITY,
        phase: 0.0,
    };

    pub fn from_complex(z: Complex64) -> Self {
        Self {
            log_abs: z.re,
            phase: logdet::wrap_phase(z.im),
        }
    }

    pub fn as_complex(&self) -> Complex64 {
        Complex64::new(self.log_abs, self.phase)
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.log_abs > DEGENERATE_LOG_ABS)
    }

    /// `Ψ(other) / Ψ(self)`.
    pub fn ratio_to(&self, other: &LogAmplitude) -> Complex64 {
        if other.is_degenerate() {
            return Complex64::new(0.0, 0.0);
        }
        (other.as_complex() - self.as_complex()).exp()
    }
}

/// `log Ψ`, `∇ log Ψ` over the `2N` flattened coordinates, and `∇² log Ψ`.
#[derive(Clone, Debug)]
pub struct DerivativeBundle {
    pub log_psi: LogAmplitude,
    pub grad: Vec<Complex64>,
    pub laplacian: Complex64,
}

/// `∂ log Ψ / ∂θ_k`, indexed like the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradient {
    pub values: Vec<Complex64>,
}

/// Anything that can be sampled and have its local energy evaluated.
pub trait Wavefunction: Sync {
    fn n_electrons(&self) -> usize;

    fn log_psi(&self, config: &ParticleConfiguration) -> Result<LogAmplitude>;

    fn spatial_derivatives(&self, config: &ParticleConfiguration) -> Result<DerivativeBundle>;

    /// `log Ψ` and `(∂_x, ∂_y) log Ψ` for electron `i` only.
    fn electron_gradient(
        &self,
        config: &ParticleConfiguration,
        i: usize,
    ) -> Result<(LogAmplitude, [Complex64; 2])> {
        let d = self.spatial_derivatives(config)?;
        Ok((d.log_psi, [d.grad[2 * i], d.grad[2 * i + 1]]))
    }
}

impl Wavefunction for NetworkParams {
    fn n_electrons(&self) -> usize {
        self.geometry().n_electrons
    }

    fn log_psi(&self, config: &ParticleConfiguration) -> Result<LogAmplitude> {
        eval_log_psi(self, config)
    }

    fn spatial_derivatives(&self, config: &ParticleConfiguration) -> Result<DerivativeBundle> {
        eval_spatial_derivatives(self, config)
    }

    fn electron_gradient(
        &self,
        config: &ParticleConfiguration,
        i: usize,
    ) -> Result<(LogAmplitude, [Complex64; 2])> {
        let (sum, _) = forward(self, config, &[2 * i, 2 * i + 1], false, false)?;
        Ok((
            LogAmplitude::from_complex(sum.log_psi),
            [sum.grad[0], sum.grad[1]],
        ))
    }
}

/// Value-only forward pass.
pub fn eval_log_psi(
    params: &NetworkParams,
    config: &ParticleConfiguration,
) -> Result<LogAmplitude> {
    let (sum, _) = forward(params, config, &[], false, false)?;
    Ok(LogAmplitude::from_complex(sum.log_psi))
}

/// Gradient and Laplacian of `log Ψ` in all `2N` coordinates from a single
/// forward pass carrying `2N + 2` channels.
pub fn eval_spatial_derivatives(
    params: &NetworkParams,
    config: &ParticleConfiguration,
) -> Result<DerivativeBundle> {
    let coords: Vec<usize> = (0..2 * config.n_electrons()).collect();
    let (sum, _) = forward(params, config, &coords, true, false)?;
    Ok(DerivativeBundle {
        log_psi: LogAmplitude::from_complex(sum.log_psi),
        grad: sum.grad,
        laplacian: sum.lap,
    })
}

/// `∂ log Ψ / ∂θ` by reverse accumulation through the value-only forward pass.
pub fn eval_param_gradient(
    params: &NetworkParams,
    config: &ParticleConfiguration,
) -> Result<ParamGradient> {
    Ok(param_gradient_with_records(params, config, false)?.1)
}

/// Parameter gradient plus the amplitude and, optionally, per-layer
/// activation/adjoint records for Kronecker-factored curvature.
pub fn param_gradient_with_records(
    params: &NetworkParams,
    config: &ParticleConfiguration,
    records: bool,
) -> Result<(LogAmplitude, ParamGradient, Vec<LayerRecord>)> {
    let (sum, tape) = forward(params, config, &[], false, true)?;
    let tape = tape.expect("tape requested");
    let (values, recs) = backward(params, &tape, records);
    Ok((
        LogAmplitude::from_complex(sum.log_psi),
        ParamGradient { values },
        recs,
    ))
}
