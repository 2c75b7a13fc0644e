//! Network layers acting on derivative-carrying streams.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{NetworkParams, ParticleConfiguration, TensorKind, FEATURE_DIM};
use crate::diff::jets::{jet_mul_acc, jet_softmax, Streams};
use crate::diff::logdet::MatrixJets;

/// Periodic features `(cos 2πx/Lx, sin 2πx/Lx, cos 2πy/Ly, sin 2πy/Ly, s)`
/// of every electron.
pub fn featurize(config: &ParticleConfiguration) -> Vec<[f64; FEATURE_DIM]> {
    let cell = config.cell();
    config
        .positions()
        .iter()
        .zip(config.spins())
        .map(|(p, &s)| {
            let (sx, cx) = (2.0 * PI * p[0] / cell.lx).sin_cos();
            let (sy, cy) = (2.0 * PI * p[1] / cell.ly).sin_cos();
            [cx, sx, cy, sy, s as f64]
        })
        .collect()
}

/// Features as streams with derivative channels along the flattened
/// coordinates `coords` (`c = 2i + axis`), plus the restricted Laplacian when
/// `laplacian` is set.
pub fn feature_streams(
    config: &ParticleConfiguration,
    coords: &[usize],
    laplacian: bool,
) -> Streams {
    let n = config.n_electrons();
    let nd = coords.len();
    let cell = config.cell();
    let feats = featurize(config);
    let mut s = Streams::zeros(FEATURE_DIM, n, nd, laplacian);
    for (i, f) in feats.iter().enumerate() {
        for (r, &v) in f.iter().enumerate() {
            s.jet_mut(r, i)[0] = v;
        }
        for axis in 0..2 {
            let k = 2.0 * PI / cell.length(axis);
            let (rc, rs) = (2 * axis, 2 * axis + 1);
            let (c, sn) = (f[rc], f[rs]);
            let Some(d) = coords.iter().position(|&x| x == 2 * i + axis) else {
                continue;
            };
            s.jet_mut(rc, i)[1 + d] = -k * sn;
            s.jet_mut(rs, i)[1 + d] = k * c;
            if laplacian {
                s.jet_mut(rc, i)[nd + 1] = -k * k * c;
                s.jet_mut(rs, i)[nd + 1] = -k * k * sn;
            }
        }
    }
    s
}

/// Intermediate values of one attention head kept for the reverse pass.
#[derive(Clone, Debug)]
pub(crate) struct HeadCache {
    pub q: Streams,
    pub k: Streams,
    pub v: Streams,
    /// Attention weight jets, `[(i · N + j) · channels + channel]`.
    pub probs: Vec<f64>,
}

/// Multi-head self-attention with residual connection,
/// `f_i = h_i + W_o concat_heads(Σ_j softmax_j(q_i·k_j/√d) v_j)`.
/// Returns the output, per-head caches, and the concatenated head outputs.
pub(crate) fn attention_forward(
    h: &Streams,
    params: &NetworkParams,
    layer: usize,
) -> (Streams, Vec<HeadCache>, Streams) {
    let g = params.geometry();
    let n = h.tokens();
    let nd = h.n_dir();
    let lap = h.has_laplacian();
    let ch = h.channels();
    let scale = 1.0 / (g.d_attn as f64).sqrt();
    let mut caches = Vec::with_capacity(g.n_heads);
    let mut outs = Vec::with_capacity(g.n_heads);
    for head in 0..g.n_heads {
        let q = h.linear(params.tensor(TensorKind::Query { layer, head }), g.d_attn);
        let k = h.linear(params.tensor(TensorKind::Key { layer, head }), g.d_attn);
        let v = h.linear(
            params.tensor(TensorKind::Value { layer, head }),
            g.d_attn_vals,
        );
        let mut probs = vec![0.0; n * n * ch];
        for i in 0..n {
            for j in 0..n {
                let out = &mut probs[(i * n + j) * ch..(i * n + j + 1) * ch];
                for a in 0..g.d_attn {
                    jet_mul_acc(q.jet(a, i), k.jet(a, j), out, nd, lap, scale);
                }
            }
            jet_softmax(&mut probs[i * n * ch..(i + 1) * n * ch], n, nd, lap);
        }
        let mut o = v.zeros_like(g.d_attn_vals);
        for b in 0..g.d_attn_vals {
            for i in 0..n {
                for j in 0..n {
                    let p = &probs[(i * n + j) * ch..(i * n + j + 1) * ch];
                    jet_mul_acc(p, v.jet(b, j), o.jet_mut(b, i), nd, lap, 1.0);
                }
            }
        }
        outs.push(o);
        caches.push(HeadCache { q, k, v, probs });
    }
    let concat = Streams::stack(&outs);
    let mut out = concat.linear(params.tensor(TensorKind::Output { layer }), g.d_model);
    out.add_assign(h);
    (out, caches, concat)
}

/// Self-attention block `layer` applied to the streams `h`.
pub fn self_attention_layer(h: &Streams, params: &NetworkParams, layer: usize) -> Streams {
    attention_forward(h, params, layer).0
}

/// Residual MLP `f + tanh(W f + b)`; also returns the `tanh` jets.
pub(crate) fn mlp_forward(
    f: &Streams,
    params: &NetworkParams,
    layer: usize,
    index: usize,
) -> (Streams, Streams) {
    let d = params.geometry().d_model;
    let mut z = f.linear(params.tensor(TensorKind::MlpWeight { layer, index }), d);
    z.add_bias(params.tensor(TensorKind::MlpBias { layer, index }));
    let t = z.tanh();
    let mut out = t.clone();
    out.add_assign(f);
    (out, t)
}

/// MLP sub-block `index` of block `layer`.
pub fn mlp_layer(f: &Streams, params: &NetworkParams, layer: usize, index: usize) -> Streams {
    mlp_forward(f, params, layer, index).0
}

/// Raw orbital projections: `2 · N · n_det` real rows per electron stream.
pub(crate) fn orbital_projections(h: &Streams, params: &NetworkParams) -> Streams {
    h.linear(
        params.tensor(TensorKind::Orbitals),
        params.geometry().orbital_rows(),
    )
}

/// Splits projections into the complex matrices
/// `Φ^m_{ij} = w^m_{2j}·h_i + i w^m_{2j+1}·h_i` with their jets.
pub(crate) fn orbital_matrices(proj: &Streams, n_det: usize) -> Vec<MatrixJets> {
    let n = proj.tokens();
    let nd = proj.n_dir();
    let zero = Complex64::new(0.0, 0.0);
    (0..n_det)
        .map(|m| {
            let mut value = vec![zero; n * n];
            let mut grad = vec![vec![zero; n * n]; nd];
            let mut lap = proj.has_laplacian().then(|| vec![zero; n * n]);
            for j in 0..n {
                let r = (m * n + j) * 2;
                for i in 0..n {
                    let re = proj.jet(r, i);
                    let im = proj.jet(r + 1, i);
                    value[i * n + j] = Complex64::new(re[0], im[0]);
                    for (d, gd) in grad.iter_mut().enumerate() {
                        gd[i * n + j] = Complex64::new(re[1 + d], im[1 + d]);
                    }
                    if let Some(l) = lap.as_mut() {
                        l[i * n + j] = Complex64::new(re[nd + 1], im[nd + 1]);
                    }
                }
            }
            MatrixJets {
                n,
                value,
                grad,
                lap,
            }
        })
        .collect()
}

/// Generalized orbital matrices, one per determinant, from final streams.
pub fn generalized_orbitals(h: &Streams, params: &NetworkParams) -> Vec<MatrixJets> {
    orbital_matrices(&orbital_projections(h, params), params.geometry().n_det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{init_params, tiny_geometry, SimulationBox};

    fn config() -> ParticleConfiguration {
        ParticleConfiguration::new(
            SimulationBox::new(5.0, 4.0).unwrap(),
            vec![[0.3, 1.2], [2.5, 3.9], [4.1, 0.7]],
            vec![1, -1, 1],
        )
        .unwrap()
    }

    #[test]
    fn feature_jets_match_finite_differences() {
        let c = config();
        let coords: Vec<usize> = (0..6).collect();
        let s = feature_streams(&c, &coords, true);
        let h = 1e-5;
        for coord in 0..6 {
            let mut p = c.clone();
            let mut m = c.clone();
            p.set_coordinate(coord, c.coordinate(coord) + h);
            m.set_coordinate(coord, c.coordinate(coord) - h);
            let (fp, fm, f0) = (featurize(&p), featurize(&m), featurize(&c));
            for r in 0..FEATURE_DIM {
                let i = coord / 2;
                let d = (fp[i][r] - fm[i][r]) / (2.0 * h);
                assert!((s.jet(r, i)[1 + coord] - d).abs() < 1e-8);
                let dd = (fp[i][r] - 2.0 * f0[i][r] + fm[i][r]) / (h * h);
                // Only one direction touches electron i per axis, so the
                // restricted Laplacian splits into per-axis second derivatives.
                let other = coord ^ 1;
                let mut p2 = c.clone();
                let mut m2 = c.clone();
                p2.set_coordinate(other, c.coordinate(other) + h);
                m2.set_coordinate(other, c.coordinate(other) - h);
                let dd2 = (featurize(&p2)[i][r] - 2.0 * f0[i][r] + featurize(&m2)[i][r]) / (h * h);
                assert!((s.jet(r, i)[7] - dd - dd2).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let g = tiny_geometry(3, 5.0);
        let params = init_params(&g, 3).unwrap();
        let c = config();
        let h =
            feature_streams(&c, &[], false).linear(params.tensor(TensorKind::Embedding), g.d_model);
        let out = self_attention_layer(&h, &params, 0);
        let perm = [2, 0, 1];
        let out_p = self_attention_layer(&h.permute_tokens(&perm), &params, 0);
        let expect = out.permute_tokens(&perm);
        for (a, b) in out_p.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn orbital_layout_is_row_electron_column_orbital() {
        let g = tiny_geometry(3, 5.0);
        let params = init_params(&g, 4).unwrap();
        let c = config();
        let h =
            feature_streams(&c, &[], false).linear(params.tensor(TensorKind::Embedding), g.d_model);
        let mats = generalized_orbitals(&h, &params);
        assert_eq!(mats.len(), g.n_det);
        let w = params.tensor(TensorKind::Orbitals);
        let hv = h.token_values(1);
        let row = |r: usize| -> f64 { (0..g.d_model).map(|k| w[r * g.d_model + k] * hv[k]).sum() };
        // Φ^1_{1,2}
        let expect = Complex64::new(row((3 + 2) * 2), row((3 + 2) * 2 + 1));
        assert!((mats[1].value[3 + 2] - expect).norm() < 1e-13);
    }
}
