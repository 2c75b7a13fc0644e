use num_complex::Complex64;

use super::jets::Streams;
use super::logdet::{combine_determinants, log_det_jets, SumJets};
use crate::ansatz::{
    attention_forward, feature_streams, mlp_forward, orbital_matrices, orbital_projections,
    HeadCache, NetworkParams, ParticleConfiguration, TensorKind,
};
use crate::error::Result;

pub(crate) struct MlpTape {
    pub input: Streams,
    pub tanh: Streams,
}

pub(crate) struct LayerTape {
    pub input: Streams,
    pub heads: Vec<HeadCache>,
    pub concat: Streams,
    pub mlp: Vec<MlpTape>,
}

/// Value-only activations of one forward pass, for reverse accumulation.
pub(crate) struct Tape {
    pub features: Streams,
    pub layers: Vec<LayerTape>,
    pub final_h: Streams,
    pub inverses: Vec<Option<Vec<Complex64>>>,
    pub weights: Vec<Complex64>,
}

/// Runs the network carrying derivative channels along `coords`. A tape can
/// only be recorded for value-only passes.
pub(crate) fn forward(
    params: &NetworkParams,
    config: &ParticleConfiguration,
    coords: &[usize],
    laplacian: bool,
    record: bool,
) -> Result<(SumJets, Option<Tape>)> {
    debug_assert!(!record || (coords.is_empty() && !laplacian));
    let g = params.geometry();
    config.check_electrons(g.n_electrons)?;
    let features = feature_streams(config, coords, laplacian);
    let mut h = features.linear(params.tensor(TensorKind::Embedding), g.d_model);
    let mut layers = Vec::new();
    for layer in 0..g.n_layers {
        let (f, heads, concat) = attention_forward(&h, params, layer);
        let input = std::mem::replace(&mut h, f);
        let mut mlp = Vec::new();
        for index in 0..g.n_mlp_per_layer {
            let (next, tanh) = mlp_forward(&h, params, layer, index);
            let input = std::mem::replace(&mut h, next);
            if record {
                mlp.push(MlpTape { input, tanh });
            }
        }
        if record {
            layers.push(LayerTape {
                input,
                heads,
                concat,
                mlp,
            });
        }
    }
    let proj = orbital_projections(&h, params);
    let terms: Vec<_> = orbital_matrices(&proj, g.n_det)
        .iter()
        .map(log_det_jets)
        .collect();
    let sum = combine_determinants(&terms, coords.len())?;
    let tape = record.then(|| Tape {
        features,
        layers,
        final_h: h,
        inverses: terms.into_iter().map(|t| t.map(|t| t.inverse)).collect(),
        weights: sum.weights.clone(),
    });
    Ok((sum, tape))
}
