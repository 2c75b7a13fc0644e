use serde::{Deserialize, Serialize};

use crate::error::{Result, VmcError};

/// Rectangular periodic simulation cell `[0, lx) × [0, ly)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationBox {
    pub lx: f64,
    pub ly: f64,
}

impl SimulationBox {
    pub fn square(length: f64) -> Self {
        Self {
            lx: length,
            ly: length,
        }
    }

    pub fn new(lx: f64, ly: f64) -> Result<Self> {
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(VmcError::Config(format!(
                "box lengths must be positive, got ({lx}, {ly})"
            )));
        }
        Ok(Self { lx, ly })
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn length(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.lx
        } else {
            self.ly
        }
    }

    pub fn wrap(&self, p: [f64; 2]) -> [f64; 2] {
        [
            wrap_coordinate(p[0], self.lx),
            wrap_coordinate(p[1], self.ly),
        ]
    }

    /// Shortest periodic image of a displacement, components in `[-L/2, L/2)`.
    pub fn minimum_image(&self, d: [f64; 2]) -> [f64; 2] {
        [
            d[0] - self.lx * (d[0] / self.lx).round(),
            d[1] - self.ly * (d[1] / self.ly).round(),
        ]
    }
}

/// Maps `x` into `[0, l)`; `rem_euclid` can round up to exactly `l`.
pub fn wrap_coordinate(x: f64, l: f64) -> f64 {
    let y = x.rem_euclid(l);
    if y >= l {
        0.0
    } else {
        y
    }
}

/// Positions and spins of all electrons of one walker.
///
/// Positions are always stored wrapped into the primary cell. Spins are
/// `+1` (up) or `-1` (down).
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleConfiguration {
    cell: SimulationBox,
    positions: Vec<[f64; 2]>,
    spins: Vec<i8>,
}

impl ParticleConfiguration {
    pub fn new(cell: SimulationBox, positions: Vec<[f64; 2]>, spins: Vec<i8>) -> Result<Self> {
        if positions.len() != spins.len() {
            return Err(VmcError::Dimension(format!(
                "{} positions but {} spins",
                positions.len(),
                spins.len()
            )));
        }
        if let Some(s) = spins.iter().find(|s| **s != 1 && **s != -1) {
            return Err(VmcError::Dimension(format!(
                "spin must be +1 or -1, got {s}"
            )));
        }
        if positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(VmcError::Dimension("non-finite electron position".into()));
        }
        let positions = positions.into_iter().map(|p| cell.wrap(p)).collect();
        Ok(Self {
            cell,
            positions,
            spins,
        })
    }

    pub fn cell(&self) -> SimulationBox {
        self.cell
    }

    pub fn n_electrons(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn position(&self, i: usize) -> [f64; 2] {
        self.positions[i]
    }

    pub fn spin(&self, i: usize) -> i8 {
        self.spins[i]
    }

    pub fn magnetization(&self) -> i32 {
        self.spins.iter().map(|&s| s as i32).sum()
    }

    pub fn set_position(&mut self, i: usize, p: [f64; 2]) {
        self.positions[i] = self.cell.wrap(p);
    }

    /// Coordinate `c = 2 i + axis` in the flattened `2N` layout.
    pub fn coordinate(&self, c: usize) -> f64 {
        self.positions[c / 2][c % 2]
    }

    pub fn set_coordinate(&mut self, c: usize, value: f64) {
        let mut p = self.positions[c / 2];
        p[c % 2] = value;
        self.set_position(c / 2, p);
    }

    pub fn flip_spin(&mut self, i: usize) {
        self.spins[i] = -self.spins[i];
    }

    pub fn with_spin_flipped(&self, i: usize) -> Self {
        let mut out = self.clone();
        out.flip_spin(i);
        out
    }

    pub fn swap_spins(&mut self, i: usize, j: usize) {
        self.spins.swap(i, j);
    }

    /// Exchanges the full generalized coordinates (position and spin) of `i` and `j`.
    pub fn swap_electrons(&mut self, i: usize, j: usize) {
        self.positions.swap(i, j);
        self.spins.swap(i, j);
    }

    pub fn check_electrons(&self, n: usize) -> Result<()> {
        if self.n_electrons() != n {
            return Err(VmcError::Dimension(format!(
                "configuration has {} electrons, model expects {n}",
                self.n_electrons()
            )));
        }
        Ok(())
    }
}
