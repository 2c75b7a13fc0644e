//! 2D Ewald summation of `1/r` on a rectangular periodic cell with a
//! uniform neutralizing background.

use std::f64::consts::PI;

use libm::erfc;

use crate::ansatz::SimulationBox;

/// Arguments of `erfc` beyond this are below `1e-19` and dropped.
const ERFC_CUTOFF: f64 = 6.5;

/// Precomputed image and reciprocal-vector lists for one cell and splitting
/// parameter `alpha`.
#[derive(Clone, Debug)]
pub struct Ewald {
    cell: SimulationBox,
    alpha: f64,
    images: Vec<[f64; 2]>,
    /// `(G, (2π/A) erfc(|G|/2α)/|G|)` for `G ≠ 0`.
    recip: Vec<([f64; 2], f64)>,
    background: f64,
    madelung: f64,
}

impl Ewald {
    /// Splitting parameter `√(π/A)` balances the two sums.
    pub fn new(cell: SimulationBox) -> Self {
        Self::with_alpha(cell, (PI / cell.area()).sqrt())
    }

    pub fn with_alpha(cell: SimulationBox, alpha: f64) -> Self {
        let area = cell.area();
        let r_cut = ERFC_CUTOFF / alpha + 0.5 * (cell.lx.hypot(cell.ly));
        let (nx, ny) = (
            (r_cut / cell.lx).ceil() as i64,
            (r_cut / cell.ly).ceil() as i64,
        );
        let mut images = Vec::new();
        for i in -nx..=nx {
            for j in -ny..=ny {
                let n = [i as f64 * cell.lx, j as f64 * cell.ly];
                if n[0].hypot(n[1]) <= r_cut {
                    images.push(n);
                }
            }
        }
        let g_cut = 2.0 * alpha * ERFC_CUTOFF;
        let (mx, my) = (
            (g_cut * cell.lx / (2.0 * PI)).ceil() as i64,
            (g_cut * cell.ly / (2.0 * PI)).ceil() as i64,
        );
        let mut recip = Vec::new();
        for i in -mx..=mx {
            for j in -my..=my {
                if i == 0 && j == 0 {
                    continue;
                }
                let g = [2.0 * PI * i as f64 / cell.lx, 2.0 * PI * j as f64 / cell.ly];
                let gn = g[0].hypot(g[1]);
                if gn <= g_cut {
                    recip.push((g, 2.0 * PI / area * erfc(gn / (2.0 * alpha)) / gn));
                }
            }
        }
        let background = -2.0 * PI.sqrt() / (alpha * area);
        let real_self: f64 = images
            .iter()
            .map(|n| n[0].hypot(n[1]))
            .filter(|&r| r > 0.0)
            .map(|r| erfc(alpha * r) / r)
            .sum();
        let recip_self: f64 = recip.iter().map(|(_, c)| c).sum();
        let madelung = real_self + recip_self + background - 2.0 * alpha / PI.sqrt();
        Self {
            cell,
            alpha,
            images,
            recip,
            background,
            madelung,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Interaction of a unit charge with another unit charge at displacement
    /// `d`, all its periodic images, and the background. Zero cell average.
    pub fn pair_potential(&self, d: [f64; 2]) -> f64 {
        let d = self.cell.minimum_image(d);
        if d == [0.0, 0.0] {
            return f64::INFINITY;
        }
        let mut v = self.background;
        for n in &self.images {
            let r = (d[0] + n[0]).hypot(d[1] + n[1]);
            v += erfc(self.alpha * r) / r;
        }
        for (g, c) in &self.recip {
            v += c * (g[0] * d[0] + g[1] * d[1]).cos();
        }
        v
    }

    /// Interaction of a charge with its own images and background.
    pub fn madelung(&self) -> f64 {
        self.madelung
    }

    /// `½ Σ_{i≠j} v(r_i − r_j) + ½ N ξ` for unit charges.
    pub fn energy(&self, positions: &[[f64; 2]]) -> f64 {
        let n = positions.len();
        let mut e = 0.5 * n as f64 * self.madelung;
        for i in 0..n {
            for j in i + 1..n {
                let d = [
                    positions[i][0] - positions[j][0],
                    positions[i][1] - positions[j][1],
                ];
                e += self.pair_potential(d);
            }
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Potential at `p` of a unit charge spread uniformly over the square
    /// `[c − L/2, c + L/2]²`, from the antiderivative `u ln(v + r) + v ln(u + r)`.
    fn square_charge(p: [f64; 2], c: [f64; 2], l: f64) -> f64 {
        fn ln_sum(a: f64, r: f64, other: f64) -> f64 {
            if a >= 0.0 {
                (a + r).ln()
            } else {
                (other * other).ln() - (r - a).ln()
            }
        }
        fn f(u: f64, v: f64) -> f64 {
            let r = u.hypot(v);
            let a = if u == 0.0 { 0.0 } else { u * ln_sum(v, r, u) };
            let b = if v == 0.0 { 0.0 } else { v * ln_sum(u, r, v) };
            a + b
        }
        let (u0, u1) = (c[0] - l / 2.0 - p[0], c[0] + l / 2.0 - p[0]);
        let (v0, v1) = (c[1] - l / 2.0 - p[1], c[1] + l / 2.0 - p[1]);
        (f(u1, v1) - f(u0, v1) - f(u1, v0) + f(u0, v0)) / (l * l)
    }

    /// Charge plus its own background square, tiled out to `|n|∞ ≤ m`, with
    /// the quadrupole tail `−L²/(24 r³)` integrated analytically beyond.
    fn tiled(d: [f64; 2], l: f64, m: i64) -> f64 {
        let mut s = 0.0;
        for i in -m..=m {
            for j in -m..=m {
                let c = [i as f64 * l, j as f64 * l];
                let x = [d[0] - c[0], d[1] - c[1]];
                s += 1.0 / x[0].hypot(x[1]) - square_charge(d, c, l);
            }
        }
        s - 2f64.sqrt() / (6.0 * (m as f64 + 0.5) * l)
    }

    fn image_oracle(d: [f64; 2], l: f64) -> f64 {
        // Leading truncation error left after the tail correction is O(m⁻³).
        let (a, b) = (tiled(d, l, 60), tiled(d, l, 120));
        b + (b - a) / 7.0
    }

    #[test]
    fn square_charge_matches_far_field() {
        let l = 2.0;
        let p: [f64; 2] = [30.0, 17.0];
        let r = p[0].hypot(p[1]);
        let expect = 1.0 / r + l * l / (24.0 * r.powi(3));
        assert!((square_charge(p, [0.0, 0.0], l) - expect).abs() < 1e-8);
    }

    #[test]
    fn pair_potential_matches_image_sum() {
        let l = 6.0;
        let e = Ewald::new(SimulationBox::square(l));
        for d in [[l / 2.0, 0.0], [1.3, -0.4], [0.2, 2.9]] {
            let oracle = image_oracle(d, l);
            let v = e.pair_potential(d);
            assert!((v - oracle).abs() < 1e-6, "{d:?}: {v} vs {oracle}");
        }
    }

    #[test]
    fn independent_of_splitting() {
        let cell = SimulationBox::new(5.0, 3.0).unwrap();
        let base = Ewald::new(cell);
        let pos = [[0.1, 0.2], [2.4, 1.9], [4.0, 0.3], [1.0, 2.8]];
        let e0 = base.energy(&pos);
        for f in [0.5, 0.8, 1.4, 2.0] {
            let e = Ewald::with_alpha(cell, base.alpha() * f);
            assert!((e.energy(&pos) - e0).abs() < 1e-8);
            assert!((e.madelung() - base.madelung()).abs() < 1e-8);
        }
    }

    #[test]
    fn symmetric_and_periodic() {
        let cell = SimulationBox::square(4.0);
        let e = Ewald::new(cell);
        let d = [0.7, -1.1];
        let v = e.pair_potential(d);
        assert!((e.pair_potential([-d[0], -d[1]]) - v).abs() < 1e-12);
        assert!((e.pair_potential([d[0] + 4.0, d[1]]) - v).abs() < 1e-12);
        assert_eq!(e.pair_potential([4.0, 0.0]), f64::INFINITY);
    }

    #[test]
    fn cell_average_vanishes() {
        let cell = SimulationBox::square(3.0);
        let e = Ewald::new(cell);
        // Midpoint grid avoids the origin; the 1/r singularity is integrable
        // but converges slowly, so only check a loose bound.
        let m = 200;
        let h = 3.0 / m as f64;
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                s += e.pair_potential([(i as f64 + 0.5) * h - 1.5, (j as f64 + 0.5) * h - 1.5]);
            }
        }
        assert!((s / (m * m) as f64).abs() < 2e-2);
    }
}
