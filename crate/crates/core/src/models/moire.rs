//! Triangular-harmonic moiré potential.

use std::f64::consts::PI;

/// `V(r) = −2V₀ Σ_{j=1..3} cos(g_j·r + φ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MoirePotential {
    pub v0: f64,
    pub phi: f64,
    pub a_m: f64,
    g: [[f64; 2]; 3],
}

impl MoirePotential {
    pub fn new(v0: f64, phi: f64, a_m: f64) -> Self {
        let k = 4.0 * PI / (3f64.sqrt() * a_m);
        let g = std::array::from_fn(|j| {
            let t = 2.0 * PI * (j + 1) as f64 / 3.0;
            [k * t.cos(), k * t.sin()]
        });
        Self { v0, phi, a_m, g }
    }

    pub fn reciprocal_vectors(&self) -> [[f64; 2]; 3] {
        self.g
    }

    /// Primitive lattice vectors dual to the `g_j`.
    pub fn lattice_vectors(&self) -> [[f64; 2]; 2] {
        let a = self.a_m;
        [[0.0, a], [0.5 * 3f64.sqrt() * a, 0.5 * a]]
    }

    /// The two honeycomb sites per primitive cell, where `Σ cos(g_j·r)`
    /// reaches its minimum −3/2.
    pub fn honeycomb_sites(&self) -> [[f64; 2]; 2] {
        let a = self.a_m;
        let s = [a / (2.0 * 3f64.sqrt()), 0.5 * a];
        [s, [-s[0], -s[1]]]
    }

    pub fn value(&self, r: [f64; 2]) -> f64 {
        -2.0 * self.v0
            * self
                .g
                .iter()
                .map(|g| (g[0] * r[0] + g[1] * r[1] + self.phi).cos())
                .sum::<f64>()
    }

    /// `Σ_i V(r_i)`.
    pub fn total(&self, positions: &[[f64; 2]]) -> f64 {
        positions.iter().map(|&r| self.value(r)).sum()
    }
}
