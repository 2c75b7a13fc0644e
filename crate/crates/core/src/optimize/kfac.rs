//! Kronecker-factored curvature for the dense blocks of the network.
//!
//! For a block `y_i = W x_i (+ b)` shared across tokens `i`, the Fisher block
//! is approximated by `A ⊗ G` with `A = E_{s,i}[x̃ x̃ᵀ]` (inputs augmented
//! with 1 when the block has a bias) and `G = E_s[Σ_i Re(ĝ_i ĝ_iᴴ)]`, where
//! `ĝ_i` is the complex adjoint `∂ log Ψ / ∂y_i` centered over the batch.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::scale_to_constraint;
use crate::ansatz::{DenseBlock, ParamLayout};
use crate::diff::LayerRecord;
use crate::error::{Result, VmcError};

/// Eigenvalues of the running factors are floored here before damping.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Row-major factor pair of one dense block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockFactor {
    pub in_dim: usize,
    pub out_dim: usize,
    pub a: Vec<f64>,
    pub g: Vec<f64>,
}

impl BlockFactor {
    pub fn identity(in_dim: usize, out_dim: usize) -> Self {
        let eye = |d: usize| {
            let mut m = vec![0.0; d * d];
            (0..d).for_each(|i| m[i * d + i] = 1.0);
            m
        };
        Self {
            in_dim,
            out_dim,
            a: eye(in_dim),
            g: eye(out_dim),
        }
    }
}

/// Factors estimated from a single batch.
#[derive(Clone, Debug, PartialEq)]
pub struct KfacFactors {
    pub blocks: Vec<BlockFactor>,
}

fn in_dim(b: &DenseBlock) -> usize {
    b.weight.cols + usize::from(b.bias.is_some())
}

impl KfacFactors {
    /// Accumulates `A` and `G` for every block from per-sample records.
    pub fn from_records(layout: &ParamLayout, records: &[Vec<LayerRecord>]) -> Result<Self> {
        let n = records.len();
        if n == 0 {
            return Err(VmcError::Numerical(
                "no samples for curvature factors".into(),
            ));
        }
        let mut blocks: Vec<BlockFactor> = layout
            .blocks()
            .iter()
            .map(|b| BlockFactor {
                in_dim: in_dim(b),
                out_dim: b.weight.rows,
                a: vec![0.0; in_dim(b).pow(2)],
                g: vec![0.0; b.weight.rows.pow(2)],
            })
            .collect();
        let mut g_mean: Vec<Vec<Complex64>> = vec![Vec::new(); blocks.len()];
        let mut tokens = vec![0usize; blocks.len()];
        let mut seen = vec![0usize; blocks.len()];
        for sample in records {
            for rec in sample {
                let bi = rec.block;
                let spec = layout
                    .blocks()
                    .get(bi)
                    .ok_or_else(|| VmcError::Dimension(format!("record for unknown block {bi}")))?;
                let (t, inw, out) = (rec.tokens, spec.weight.cols, spec.weight.rows);
                if rec.input.len() != inw * t || rec.adjoint.len() != out * t {
                    return Err(VmcError::Dimension(format!(
                        "record for block {bi} has the wrong shape"
                    )));
                }
                let f = &mut blocks[bi];
                let d = f.in_dim;
                for i in 0..t {
                    let x = |r: usize| if r < inw { rec.input[r * t + i] } else { 1.0 };
                    for r in 0..d {
                        let xr = x(r);
                        for c in 0..d {
                            f.a[r * d + c] += xr * x(c);
                        }
                    }
                    for r in 0..out {
                        let gr = rec.adjoint[r * t + i];
                        for c in 0..out {
                            f.g[r * out + c] += (gr * rec.adjoint[c * t + i].conj()).re;
                        }
                    }
                }
                if g_mean[bi].is_empty() {
                    g_mean[bi] = vec![Complex64::new(0.0, 0.0); out * t];
                    tokens[bi] = t;
                }
                for (m, a) in g_mean[bi].iter_mut().zip(&rec.adjoint) {
                    *m += a;
                }
                seen[bi] += 1;
            }
        }
        for (bi, f) in blocks.iter_mut().enumerate() {
            if seen[bi] != n {
                return Err(VmcError::Dimension(format!(
                    "block {bi} recorded for {} of {n} samples",
                    seen[bi]
                )));
            }
            let t = tokens[bi];
            f.a.iter_mut().for_each(|v| *v /= (n * t) as f64);
            f.g.iter_mut().for_each(|v| *v /= n as f64);
            let out = f.out_dim;
            let m: Vec<Complex64> = g_mean[bi].iter().map(|v| v / n as f64).collect();
            for i in 0..t {
                for r in 0..out {
                    for c in 0..out {
                        f.g[r * out + c] -= (m[r * t + i] * m[c * t + i].conj()).re;
                    }
                }
            }
        }
        Ok(Self { blocks })
    }
}

/// Exponentially averaged factors.
#[derive(Clone, Debug, PartialEq)]
pub struct KfacState {
    decay: f64,
    blocks: Option<Vec<BlockFactor>>,
}

impl KfacState {
    pub fn new(decay: f64) -> Self {
        Self {
            decay,
            blocks: None,
        }
    }

    /// State with fixed factors, as restored from a checkpoint.
    pub fn with_blocks(decay: f64, blocks: Vec<BlockFactor>) -> Self {
        Self {
            decay,
            blocks: Some(blocks),
        }
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn blocks(&self) -> Option<&[BlockFactor]> {
        self.blocks.as_deref()
    }

    /// The first batch initializes the factors; later ones are blended in
    /// with weight `1 − decay`.
    pub fn update(&mut self, fresh: KfacFactors) {
        match &mut self.blocks {
            None => self.blocks = Some(fresh.blocks),
            Some(old) => {
                let d = self.decay;
                for (o, f) in old.iter_mut().zip(fresh.blocks) {
                    for (x, y) in o.a.iter_mut().zip(&f.a) {
                        *x = d * *x + (1.0 - d) * y;
                    }
                    for (x, y) in o.g.iter_mut().zip(&f.g) {
                        *x = d * *x + (1.0 - d) * y;
                    }
                }
            }
        }
    }
}

fn eigen(m: &[f64], d: usize) -> (Vec<f64>, DMatrix<f64>) {
    let mat = DMatrix::from_row_slice(d, d, m);
    let sym = (&mat + mat.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    (
        e.eigenvalues.iter().map(|v| v.max(EIGEN_FLOOR)).collect(),
        e.eigenvectors,
    )
}

/// `δ_b = (G + εI)⁻¹ ∇_b (A + εI)⁻¹` per block with `ε = √damping`, scaled
/// so that `Σ_b tr(δ_bᵀ G δ_b A) ≤ norm_constraint`.
pub fn kfac_precondition(
    grad: &[f64],
    layout: &ParamLayout,
    state: &KfacState,
    damping: f64,
    norm_constraint: f64,
) -> Result<Vec<f64>> {
    if grad.len() != layout.len() {
        return Err(VmcError::Dimension(format!(
            "gradient has {} entries, layout {}",
            grad.len(),
            layout.len()
        )));
    }
    let blocks = state
        .blocks()
        .ok_or_else(|| VmcError::Numerical("curvature factors not initialized".into()))?;
    let eps = damping.sqrt();
    let mut delta = vec![0.0; grad.len()];
    let mut quad = 0.0;
    for (spec, f) in layout.blocks().iter().zip(blocks) {
        let (out, inw, d) = (spec.weight.rows, spec.weight.cols, f.in_dim);
        let mut gm = DMatrix::<f64>::zeros(out, d);
        for r in 0..out {
            for c in 0..inw {
                gm[(r, c)] = grad[spec.weight.offset + r * inw + c];
            }
            if let Some(b) = spec.bias {
                gm[(r, inw)] = grad[b.offset + r];
            }
        }
        let (la, ua) = eigen(&f.a, d);
        let (lg, ug) = eigen(&f.g, out);
        let mut t = ug.transpose() * gm * &ua;
        for r in 0..out {
            for c in 0..d {
                let v = t[(r, c)] / ((lg[r] + eps) * (la[c] + eps));
                quad += lg[r] * la[c] * v * v;
                t[(r, c)] = v;
            }
        }
        let dm = ug * t * ua.transpose();
        for r in 0..out {
            for c in 0..inw {
                delta[spec.weight.offset + r * inw + c] = dm[(r, c)];
            }
            if let Some(b) = spec.bias {
                delta[b.offset + r] = dm[(r, inw)];
            }
        }
    }
    Ok(scale_to_constraint(delta, quad, norm_constraint))
}
