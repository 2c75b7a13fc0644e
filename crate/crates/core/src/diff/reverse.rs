//! Reverse accumulation of `∂ log Ψ / ∂θ` with complex adjoints.
//!
//! Activations are real while `log Ψ` is complex, so each adjoint carries a
//! real and an imaginary part; they are stored as two-channel [`Streams`] so
//! transposed linear maps reuse the same matrix kernel.

use num_complex::Complex64;

use super::forward::Tape;
use super::jets::{gemm, Streams};
use crate::ansatz::{NetworkParams, TensorKind};

/// Inputs and output adjoints of one dense block for one configuration.
/// `input` is `in_width × tokens` (real), `adjoint` is `out_width × tokens`.
#[derive(Clone, Debug)]
pub struct LayerRecord {
    pub block: usize,
    pub tokens: usize,
    pub input: Vec<f64>,
    pub adjoint: Vec<Complex64>,
}

struct Accumulator<'a> {
    params: &'a NetworkParams,
    grad: Vec<Complex64>,
    records: Option<Vec<LayerRecord>>,
}

impl Accumulator<'_> {
    /// `∂/∂W += Σ_i adj_i ⊗ x_i` for `y = W x`; records the block if asked.
    fn dense(&mut self, kind: TensorKind, adj: &Streams, input: &Streams) {
        let layout = self.params.layout();
        let spec = layout.tensor(kind);
        let (out, n, inw) = (adj.width(), adj.tokens(), input.width());
        debug_assert_eq!((spec.rows, spec.cols), (out, inw));
        let mut tmp = vec![0.0; out * inw];
        let g = &mut self.grad[spec.range()];
        for part in 0..2 {
            gemm(
                out,
                n,
                inw,
                &adj.data()[part..],
                2 * n,
                2,
                input.data(),
                1,
                n,
                &mut tmp,
                inw,
                1,
                0.0,
            );
            for (gk, t) in g.iter_mut().zip(&tmp) {
                if part == 0 {
                    gk.re += t;
                } else {
                    gk.im += t;
                }
            }
        }
        if let Some(recs) = self.records.as_mut() {
            recs.push(LayerRecord {
                block: layout.block_index(kind),
                tokens: n,
                input: input.data().to_vec(),
                adjoint: adj.to_complex(),
            });
        }
    }

    fn bias(&mut self, kind: TensorKind, adj: &Streams) {
        let spec = *self.params.layout().tensor(kind);
        let n = adj.tokens();
        for r in 0..adj.width() {
            let mut s = Complex64::new(0.0, 0.0);
            for i in 0..n {
                let j = adj.jet(r, i);
                s += Complex64::new(j[0], j[1]);
            }
            self.grad[spec.offset + r] += s;
        }
    }
}

/// Returns `∂ log Ψ / ∂θ` and, if `collect` is set, per-block records in
/// reverse layer order.
pub(crate) fn backward(
    params: &NetworkParams,
    tape: &Tape,
    collect: bool,
) -> (Vec<Complex64>, Vec<LayerRecord>) {
    let g = params.geometry();
    let n = g.n_electrons;
    let mut acc = Accumulator {
        params,
        grad: vec![Complex64::new(0.0, 0.0); params.len()],
        records: collect.then(Vec::new),
    };

    // ∂ log Σ_m D_m / ∂Φ^m_ij = w_m (Φ^m)⁻¹_ji; the imaginary projection row
    // enters Φ multiplied by i.
    let rows = g.orbital_rows();
    let mut adj_proj = vec![Complex64::new(0.0, 0.0); rows * n];
    for (m, (inv, w)) in tape.inverses.iter().zip(&tape.weights).enumerate() {
        let Some(inv) = inv else { continue };
        for j in 0..n {
            let r = (m * n + j) * 2;
            for i in 0..n {
                let a = w * inv[j * n + i];
                adj_proj[r * n + i] = a;
                adj_proj[(r + 1) * n + i] = Complex64::i() * a;
            }
        }
    }
    let adj_proj = Streams::from_complex(rows, n, &adj_proj);
    acc.dense(TensorKind::Orbitals, &adj_proj, &tape.final_h);
    let mut adj_h = adj_proj.linear_transpose(params.tensor(TensorKind::Orbitals), g.d_model);

    for (layer, lt) in tape.layers.iter().enumerate().rev() {
        for (index, mt) in lt.mlp.iter().enumerate().rev() {
            // h' = x + tanh(W x + b)
            let mut adj_z = adj_h.clone();
            for r in 0..g.d_model {
                for i in 0..n {
                    let t = mt.tanh.value(r, i);
                    let d = 1.0 - t * t;
                    let jet = adj_z.jet_mut(r, i);
                    jet[0] *= d;
                    jet[1] *= d;
                }
            }
            let wk = TensorKind::MlpWeight { layer, index };
            acc.dense(wk, &adj_z, &mt.input);
            acc.bias(TensorKind::MlpBias { layer, index }, &adj_z);
            adj_h.add_assign(&adj_z.linear_transpose(params.tensor(wk), g.d_model));
        }

        // f = h + W_o concat
        let wo = TensorKind::Output { layer };
        acc.dense(wo, &adj_h, &lt.concat);
        let adj_concat = adj_h
            .linear_transpose(params.tensor(wo), g.n_heads * g.d_attn_vals)
            .to_complex();
        let scale = 1.0 / (g.d_attn as f64).sqrt();
        let mut adj_in = adj_h;
        for (head, hc) in lt.heads.iter().enumerate() {
            let adj_o = &adj_concat[head * g.d_attn_vals * n..(head + 1) * g.d_attn_vals * n];
            let p = |i: usize, j: usize| hc.probs[i * n + j];
            let zero = Complex64::new(0.0, 0.0);
            let mut adj_v = vec![zero; g.d_attn_vals * n];
            let mut adj_p = vec![zero; n * n];
            for b in 0..g.d_attn_vals {
                for i in 0..n {
                    let ao = adj_o[b * n + i];
                    for j in 0..n {
                        adj_v[b * n + j] += p(i, j) * ao;
                        adj_p[i * n + j] += ao * hc.v.value(b, j);
                    }
                }
            }
            let mut adj_s = vec![zero; n * n];
            for i in 0..n {
                let dot: Complex64 = (0..n).map(|l| p(i, l) * adj_p[i * n + l]).sum();
                for j in 0..n {
                    adj_s[i * n + j] = p(i, j) * (adj_p[i * n + j] - dot);
                }
            }
            let mut adj_q = vec![zero; g.d_attn * n];
            let mut adj_k = vec![zero; g.d_attn * n];
            for a in 0..g.d_attn {
                for i in 0..n {
                    for j in 0..n {
                        let s = scale * adj_s[i * n + j];
                        adj_q[a * n + i] += s * hc.k.value(a, j);
                        adj_k[a * n + j] += s * hc.q.value(a, i);
                    }
                }
            }
            for (kind, adj, width) in [
                (TensorKind::Query { layer, head }, adj_q, g.d_attn),
                (TensorKind::Key { layer, head }, adj_k, g.d_attn),
                (TensorKind::Value { layer, head }, adj_v, g.d_attn_vals),
            ] {
                let adj = Streams::from_complex(width, n, &adj);
                acc.dense(kind, &adj, &lt.input);
                adj_in.add_assign(&adj.linear_transpose(params.tensor(kind), g.d_model));
            }
        }
        adj_h = adj_in;
    }

    acc.dense(TensorKind::Embedding, &adj_h, &tape.features);
    (acc.grad, acc.records.unwrap_or_default())
}
