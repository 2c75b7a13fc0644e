//! Transformer wavefunction over joint position/spin electron streams.
//!
//! Each electron is featurized periodically together with its spin, embedded
//! by a shared linear map, passed through alternating self-attention and
//! stream-wise MLP blocks, and projected onto complex generalized orbitals.
//! The amplitude is the sum of the determinants of those orbital matrices.

mod layers;
mod particles;

pub(crate) use layers::{
    attention_forward, mlp_forward, orbital_matrices, orbital_projections, HeadCache,
};
pub use layers::{
    feature_streams, featurize, generalized_orbitals, mlp_layer, self_attention_layer,
};
pub use particles::{wrap_coordinate, ParticleConfiguration, SimulationBox};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VmcError};

/// Periodic features per electron: `cos, sin` of each coordinate plus the spin.
pub const FEATURE_DIM: usize = 5;

/// Model dimensions. `d_model` is the stream width (d_L), `d_attn` the
/// query/key width, `d_attn_vals` the value width per head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelGeometry {
    pub n_electrons: usize,
    pub cell: SimulationBox,
    pub d_model: usize,
    pub d_attn: usize,
    pub d_attn_vals: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub n_mlp_per_layer: usize,
    pub n_det: usize,
}

impl ModelGeometry {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_electrons", self.n_electrons),
            ("d_model", self.d_model),
            ("d_attn", self.d_attn),
            ("d_attn_vals", self.d_attn_vals),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("n_mlp_per_layer", self.n_mlp_per_layer),
            ("n_det", self.n_det),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(VmcError::Config(format!("{name} must be at least 1")));
            }
        }
        SimulationBox::new(self.cell.lx, self.cell.ly)?;
        Ok(())
    }

    pub fn d_feature(&self) -> usize {
        FEATURE_DIM
    }

    /// Rows of the orbital projection: real and imaginary vector per
    /// (determinant, orbital).
    pub fn orbital_rows(&self) -> usize {
        2 * self.n_electrons * self.n_det
    }
}

/// Names every learnable tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TensorKind {
    Embedding,
    Query {
        layer: usize,
        head: usize,
    },
    Key {
        layer: usize,
        head: usize,
    },
    Value {
        layer: usize,
        head: usize,
    },
    Output {
        layer: usize,
    },
    MlpWeight {
        layer: usize,
        index: usize,
    },
    MlpBias {
        layer: usize,
        index: usize,
    },
    /// Row `(m · N + j) · 2 + part` holds `w^m_{2j+part}`.
    Orbitals,
}

/// A row-major `rows × cols` tensor stored at `offset` in the flat vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TensorSpec {
    pub kind: TensorKind,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Position of one learnable scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamIndex {
    pub kind: TensorKind,
    pub row: usize,
    pub col: usize,
}

/// A dense map `y = W x (+ b)` shared across electron streams; the unit of
/// Kronecker-factored curvature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenseBlock {
    pub weight: TensorSpec,
    pub bias: Option<TensorSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    tensors: Vec<TensorSpec>,
    blocks: Vec<DenseBlock>,
    len: usize,
}

impl ParamLayout {
    pub fn new(g: &ModelGeometry) -> Self {
        let mut tensors = Vec::new();
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |kind, rows, cols, tensors: &mut Vec<TensorSpec>| {
            let t = TensorSpec {
                kind,
                offset,
                rows,
                cols,
            };
            offset += rows * cols;
            tensors.push(t);
            t
        };
        let w = push(TensorKind::Embedding, g.d_model, FEATURE_DIM, &mut tensors);
        blocks.push(DenseBlock {
            weight: w,
            bias: None,
        });
        for layer in 0..g.n_layers {
            for head in 0..g.n_heads {
                for kind in [
                    TensorKind::Query { layer, head },
                    TensorKind::Key { layer, head },
                    TensorKind::Value { layer, head },
                ] {
                    let rows = if matches!(kind, TensorKind::Value { .. }) {
                        g.d_attn_vals
                    } else {
                        g.d_attn
                    };
                    let w = push(kind, rows, g.d_model, &mut tensors);
                    blocks.push(DenseBlock {
                        weight: w,
                        bias: None,
                    });
                }
            }
            let w = push(
                TensorKind::Output { layer },
                g.d_model,
                g.n_heads * g.d_attn_vals,
                &mut tensors,
            );
            blocks.push(DenseBlock {
                weight: w,
                bias: None,
            });
            for index in 0..g.n_mlp_per_layer {
                let w = push(
                    TensorKind::MlpWeight { layer, index },
                    g.d_model,
                    g.d_model,
                    &mut tensors,
                );
                let b = push(
                    TensorKind::MlpBias { layer, index },
                    g.d_model,
                    1,
                    &mut tensors,
                );
                blocks.push(DenseBlock {
                    weight: w,
                    bias: Some(b),
                });
            }
        }
        let w = push(
            TensorKind::Orbitals,
            g.orbital_rows(),
            g.d_model,
            &mut tensors,
        );
        blocks.push(DenseBlock {
            weight: w,
            bias: None,
        });
        Self {
            tensors,
            blocks,
            len: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    /// Dense blocks in forward order: embedding, per layer (per head Q, K, V;
    /// output projection; MLPs), orbital projection.
    pub fn blocks(&self) -> &[DenseBlock] {
        &self.blocks
    }

    pub fn tensor(&self, kind: TensorKind) -> &TensorSpec {
        self.tensors
            .iter()
            .find(|t| t.kind == kind)
            .unwrap_or_else(|| panic!("no tensor {kind:?} in layout"))
    }

    pub fn block_index(&self, weight: TensorKind) -> usize {
        self.blocks
            .iter()
            .position(|b| b.weight.kind == weight)
            .unwrap_or_else(|| panic!("no dense block for {weight:?}"))
    }

    /// Flat index → tensor coordinates.
    pub fn locate(&self, index: usize) -> Option<ParamIndex> {
        let t = self.tensors.iter().find(|t| t.range().contains(&index))?;
        let local = index - t.offset;
        Some(ParamIndex {
            kind: t.kind,
            row: local / t.cols,
            col: local % t.cols,
        })
    }

    /// Tensor coordinates → flat index.
    pub fn index_of(&self, p: ParamIndex) -> Option<usize> {
        let t = self.tensors.iter().find(|t| t.kind == p.kind)?;
        (p.row < t.rows && p.col < t.cols).then(|| t.offset + p.row * t.cols + p.col)
    }
}

/// All learnable tensors of the transformer, stored flat.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    geometry: ModelGeometry,
    layout: ParamLayout,
    data: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(geometry: ModelGeometry) -> Result<Self> {
        geometry.validate()?;
        let layout = ParamLayout::new(&geometry);
        let data = vec![0.0; layout.len()];
        Ok(Self {
            geometry,
            layout,
            data,
        })
    }

    pub fn from_flat(geometry: ModelGeometry, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(geometry)?;
        if data.len() != p.data.len() {
            return Err(VmcError::Dimension(format!(
                "expected {} parameters, got {}",
                p.data.len(),
                data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    pub fn geometry(&self) -> &ModelGeometry {
        &self.geometry
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn tensor(&self, kind: TensorKind) -> &[f64] {
        &self.data[self.layout.tensor(kind).range()]
    }

    pub fn tensor_mut(&mut self, kind: TensorKind) -> &mut [f64] {
        let r = self.layout.tensor(kind).range();
        &mut self.data[r]
    }
}

/// Gaussian initialization with variance `1/fan_in`, zero biases, and orbital
/// projections of scale `1/√d_model`. Reproducible for a given seed.
pub fn init_params(geometry: &ModelGeometry, seed: u64) -> Result<NetworkParams> {
    let mut params = NetworkParams::zeros(geometry.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = params.layout.tensors().to_vec();
    for t in tensors {
        if matches!(t.kind, TensorKind::MlpBias { .. }) {
            continue;
        }
        let std = 1.0 / (t.cols as f64).sqrt();
        for x in &mut params.data[t.range()] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = std * z;
        }
    }
    Ok(params)
}

#[cfg(test)]
pub(crate) fn tiny_geometry(n_electrons: usize, l: f64) -> ModelGeometry {
    ModelGeometry {
        n_electrons,
        cell: SimulationBox::square(l),
        d_model: 8,
        d_attn: 4,
        d_attn_vals: 3,
        n_heads: 2,
        n_layers: 2,
        n_mlp_per_layer: 2,
        n_det: 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_a_bijection() {
        let g = tiny_geometry(3, 5.0);
        let layout = ParamLayout::new(&g);
        let mut seen = std::collections::HashSet::new();
        for i in 0..layout.len() {
            let p = layout.locate(i).unwrap();
            assert_eq!(layout.index_of(p), Some(i));
            assert!(seen.insert(p));
        }
        assert!(layout.locate(layout.len()).is_none());
        let total: usize = layout.tensors().iter().map(|t| t.len()).sum();
        assert_eq!(total, layout.len());
    }

    #[test]
    fn layout_counts_match_shapes() {
        let g = tiny_geometry(3, 5.0);
        let layout = ParamLayout::new(&g);
        let per_layer = g.n_heads * (2 * g.d_attn + g.d_attn_vals) * g.d_model
            + g.d_model * g.n_heads * g.d_attn_vals
            + g.n_mlp_per_layer * (g.d_model * g.d_model + g.d_model);
        let expected =
            g.d_model * FEATURE_DIM + g.n_layers * per_layer + g.orbital_rows() * g.d_model;
        assert_eq!(layout.len(), expected);
        // Every scalar belongs to exactly one dense block.
        let covered: usize = layout
            .blocks()
            .iter()
            .map(|b| b.weight.len() + b.bias.map_or(0, |t| t.len()))
            .sum();
        assert_eq!(covered, layout.len());
    }

    #[test]
    fn init_is_seed_reproducible() {
        let g = tiny_geometry(2, 4.0);
        let a = init_params(&g, 11).unwrap();
        let b = init_params(&g, 11).unwrap();
        let c = init_params(&g, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.as_slice(), c.as_slice());
        let bias = a.tensor(TensorKind::MlpBias { layer: 0, index: 0 });
        assert!(bias.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_counts_are_rejected() {
        let mut g = tiny_geometry(2, 4.0);
        g.n_det = 0;
        assert!(NetworkParams::zeros(g).is_err());
    }
}
