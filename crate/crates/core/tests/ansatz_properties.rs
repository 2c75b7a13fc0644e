use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinvmc::ansatz::{
    feature_streams, featurize, generalized_orbitals, init_params, mlp_layer, self_attention_layer, ModelGeometry,
    NetworkParams, ParticleConfiguration, SimulationBox, TensorKind,
};
use spinvmc::diff::jets::Streams;
use spinvmc::diff::{eval_log_psi, Wavefunction};

fn geometry(n: usize) -> ModelGeometry {
    ModelGeometry {
        n_electrons: n,
        cell: SimulationBox::square(4.0),
        d_model: 8,
        d_attn: 4,
        d_attn_vals: 3,
        n_heads: 2,
        n_layers: 2,
        n_mlp_per_layer: 2,
        n_det: 2,
    }
}

fn config(positions: Vec<[f64; 2]>, spins: Vec<i8>) -> ParticleConfiguration {
    ParticleConfiguration::new(SimulationBox::square(4.0), positions, spins).unwrap()
}

fn random_config(rng: &mut ChaCha8Rng, n: usize) -> ParticleConfiguration {
    let pos = (0..n).map(|_| [rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)]).collect();
    let spins = (0..n).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
    config(pos, spins)
}

fn embedded(params: &NetworkParams, c: &ParticleConfiguration) -> Streams {
    feature_streams(c, &[], false).linear(params.tensor(TensorKind::Embedding), params.geometry().d_model)
}

fn matvec(w: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    (0..rows).map(|r| (0..cols).map(|k| w[r * cols + k] * x[k]).sum()).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn feature_examples() {
    let f = featurize(&config(vec![[0.0, 0.0], [1.0, 0.0]], vec![1, -1]));
    assert!(close(&f[0], &[1.0, 0.0, 1.0, 0.0, 1.0], 1e-15));
    // x = L/4
    assert!(close(&f[1], &[0.0, 1.0, 1.0, 0.0, -1.0], 1e-15));
    let wrapped = featurize(&config(vec![[4.0, 0.0]], vec![1]));
    assert!(close(&wrapped[0], &f[0], 1e-15));
}

/// `W_o` applied to the per-head attended values, concatenated.
fn attention_update(params: &NetworkParams, layer: usize, head_values: &[Vec<f64>]) -> Vec<f64> {
    let concat: Vec<f64> = head_values.iter().flatten().copied().collect();
    matvec(params.tensor(TensorKind::Output { layer }), params.geometry().d_model, &concat)
}

#[test]
fn single_electron_attends_to_itself() {
    let g = geometry(1);
    let params = init_params(&g, 3).unwrap();
    let h = embedded(&params, &config(vec![[1.3, 2.2]], vec![-1]));
    let hv = h.token_values(0);
    let values: Vec<Vec<f64>> = (0..g.n_heads)
        .map(|head| matvec(params.tensor(TensorKind::Value { layer: 0, head }), g.d_attn_vals, &hv))
        .collect();
    let delta = attention_update(&params, 0, &values);
    let expect: Vec<f64> = hv.iter().zip(&delta).map(|(a, b)| a + b).collect();
    let got = self_attention_layer(&h, &params, 0).token_values(0);
    assert!(close(&got, &expect, 1e-12), "{got:?} vs {expect:?}");
}

#[test]
fn zero_queries_and_keys_give_uniform_weights() {
    let g = geometry(3);
    let mut params = init_params(&g, 5).unwrap();
    for head in 0..g.n_heads {
        params.tensor_mut(TensorKind::Query { layer: 0, head }).fill(0.0);
        params.tensor_mut(TensorKind::Key { layer: 0, head }).fill(0.0);
    }
    let c = config(vec![[0.2, 0.3], [1.9, 3.1], [3.3, 1.0]], vec![1, -1, 1]);
    let h = embedded(&params, &c);
    let values: Vec<Vec<f64>> = (0..g.n_heads)
        .map(|head| {
            let w = params.tensor(TensorKind::Value { layer: 0, head });
            let mut mean = vec![0.0; g.d_attn_vals];
            for j in 0..3 {
                for (m, v) in mean.iter_mut().zip(matvec(w, g.d_attn_vals, &h.token_values(j))) {
                    *m += v / 3.0;
                }
            }
            mean
        })
        .collect();
    let out = self_attention_layer(&h, &params, 0);
    for i in 0..3 {
        let hv = h.token_values(i);
        let delta = attention_update(&params, 0, &values);
        let expect: Vec<f64> = hv.iter().zip(&delta).map(|(a, b)| a + b).collect();
        assert!(close(&out.token_values(i), &expect, 1e-12));
    }
}

#[test]
fn zero_mlp_is_identity() {
    let g = geometry(3);
    let mut params = init_params(&g, 6).unwrap();
    params.tensor_mut(TensorKind::MlpWeight { layer: 1, index: 0 }).fill(0.0);
    params.tensor_mut(TensorKind::MlpBias { layer: 1, index: 0 }).fill(0.0);
    let h = embedded(&params, &config(vec![[0.2, 0.3], [1.9, 3.1], [3.3, 1.0]], vec![1, -1, 1]));
    assert_eq!(mlp_layer(&h, &params, 1, 0).values(), h.values());
}

#[test]
fn mlp_is_stream_wise() {
    let g = geometry(3);
    let params = init_params(&g, 7).unwrap();
    let a = embedded(&params, &config(vec![[0.2, 0.3], [1.9, 3.1], [3.3, 1.0]], vec![1, -1, 1]));
    let b = embedded(&params, &config(vec![[0.2, 0.3], [1.9, 3.1], [0.4, 2.0]], vec![1, -1, -1]));
    let (ma, mb) = (mlp_layer(&a, &params, 0, 1), mlp_layer(&b, &params, 0, 1));
    for i in 0..2 {
        assert_eq!(ma.token_values(i), mb.token_values(i));
    }
    assert_ne!(ma.token_values(2), mb.token_values(2));
}

#[test]
fn real_projections_give_real_orbitals() {
    let g = geometry(3);
    let mut params = init_params(&g, 8).unwrap();
    let d = g.d_model;
    let w = params.tensor_mut(TensorKind::Orbitals);
    for row in (1..w.len() / d).step_by(2) {
        w[row * d..(row + 1) * d].fill(0.0);
    }
    let h = embedded(&params, &config(vec![[0.2, 0.3], [1.9, 3.1], [3.3, 1.0]], vec![1, -1, 1]));
    for m in generalized_orbitals(&h, &params) {
        assert!(m.value.iter().all(|z| z.im == 0.0));
        assert!(m.value.iter().any(|z| z.re != 0.0));
    }
}

#[test]
fn rows_depend_on_other_electrons() {
    let g = geometry(3);
    let params = init_params(&g, 9).unwrap();
    let streams = |c: &ParticleConfiguration| self_attention_layer(&embedded(&params, c), &params, 0);
    let a = streams(&config(vec![[0.2, 0.3], [1.9, 3.1], [3.3, 1.0]], vec![1, -1, 1]));
    let b = streams(&config(vec![[0.2, 0.3], [1.9, 3.1], [2.5, 1.7]], vec![1, -1, 1]));
    let (oa, ob) = (generalized_orbitals(&a, &params), generalized_orbitals(&b, &params));
    // Row 0 of every determinant moves although electron 0 stayed put.
    for (ma, mb) in oa.iter().zip(&ob) {
        assert!((0..3).any(|j| (ma.value[j] - mb.value[j]).norm() > 1e-8));
    }
}

#[test]
fn amplitude_is_periodic_and_spin_sensitive() {
    let g = geometry(3);
    let params = init_params(&g, 10).unwrap();
    let base = config(vec![[0.2, 0.3], [1.9, 3.1], [3.3, 1.0]], vec![1, -1, 1]);
    let shifted = config(vec![[4.2, 0.3], [1.9, -0.9], [3.3, 9.0]], vec![1, -1, 1]);
    let (a, b) = (params.log_psi(&base).unwrap(), params.log_psi(&shifted).unwrap());
    assert!((a.log_abs - b.log_abs).abs() < 1e-12 && (a.phase - b.phase).abs() < 1e-12);
    let flipped = base.with_spin_flipped(1);
    assert_ne!(params.log_psi(&base).unwrap(), params.log_psi(&flipped).unwrap());
}

#[test]
fn initialization_is_seeded_and_finite() {
    let g = geometry(4);
    let a = init_params(&g, 1).unwrap();
    assert_eq!(a, init_params(&g, 1).unwrap());
    assert_ne!(a.as_slice(), init_params(&g, 2).unwrap().as_slice());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let lp = eval_log_psi(&a, &random_config(&mut rng, 4)).unwrap();
        assert!(lp.log_abs.is_finite() && lp.phase.is_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exchange_flips_the_sign(seed in 0u64..10_000, i in 0usize..4, j in 0usize..4) {
        prop_assume!(i != j);
        let params = init_params(&geometry(4), seed % 7).unwrap();
        let c = random_config(&mut ChaCha8Rng::seed_from_u64(seed), 4);
        let mut swapped = c.clone();
        swapped.swap_electrons(i, j);
        let (a, b) = (params.log_psi(&c).unwrap(), params.log_psi(&swapped).unwrap());
        prop_assert!((a.ratio_to(&b) + 1.0).norm() < 1e-10);
    }

    #[test]
    fn mlp_moves_streams_by_at_most_one(seed in 0u64..10_000) {
        let params = init_params(&geometry(3), seed).unwrap();
        let h = embedded(&params, &random_config(&mut ChaCha8Rng::seed_from_u64(seed), 3));
        let out = mlp_layer(&h, &params, 0, 0);
        for (a, b) in out.values().iter().zip(h.values()) {
            prop_assert!((a - b).abs() <= 1.0);
        }
    }
}
