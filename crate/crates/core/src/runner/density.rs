//! Spin-resolved density histogram over the simulation cell.

use std::io::Write;

use crate::ansatz::{ParticleConfiguration, SimulationBox};

/// `G × G` up/down counters over the cell, row index along `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinDensityGrid {
    cell: SimulationBox,
    resolution: usize,
    up: Vec<u64>,
    down: Vec<u64>,
    samples: u64,
}

impl SpinDensityGrid {
    pub fn new(cell: SimulationBox, resolution: usize) -> Self {
        let n = resolution * resolution;
        Self {
            cell,
            resolution,
            up: vec![0; n],
            down: vec![0; n],
            samples: 0,
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    fn bin(&self, p: [f64; 2]) -> usize {
        let p = self.cell.wrap(p);
        let g = self.resolution;
        let ix = ((p[0] / self.cell.lx * g as f64) as usize).min(g - 1);
        let iy = ((p[1] / self.cell.ly * g as f64) as usize).min(g - 1);
        iy * g + ix
    }

    pub fn accumulate(&mut self, config: &ParticleConfiguration) {
        for (p, s) in config.positions().iter().zip(config.spins()) {
            let b = self.bin(*p);
            if *s > 0 {
                self.up[b] += 1;
            } else {
                self.down[b] += 1;
            }
        }
        self.samples += 1;
    }

    pub fn accumulate_all<'a>(
        &mut self,
        configs: impl IntoIterator<Item = &'a ParticleConfiguration>,
    ) {
        for c in configs {
            self.accumulate(c);
        }
    }

    pub fn counts(&self, ix: usize, iy: usize) -> (u64, u64) {
        let b = iy * self.resolution + ix;
        (self.up[b], self.down[b])
    }

    pub fn total_counts(&self) -> u64 {
        self.up.iter().sum::<u64>() + self.down.iter().sum::<u64>()
    }

    fn bin_area(&self) -> f64 {
        self.cell.area() / (self.resolution * self.resolution) as f64
    }

    /// Mean `(n↑, n↓)` per unit area in bin `(ix, iy)`.
    pub fn density(&self, ix: usize, iy: usize) -> (f64, f64) {
        if self.samples == 0 {
            return (0.0, 0.0);
        }
        let (u, d) = self.counts(ix, iy);
        let norm = self.samples as f64 * self.bin_area();
        (u as f64 / norm, d as f64 / norm)
    }

    pub fn total_density(&self, ix: usize, iy: usize) -> f64 {
        let (u, d) = self.density(ix, iy);
        u + d
    }

    /// `(n↑ − n↓)/(n↑ + n↓)`, `None` for an empty bin.
    pub fn polarization(&self, ix: usize, iy: usize) -> Option<f64> {
        let (u, d) = self.counts(ix, iy);
        (u + d > 0).then(|| (u as f64 - d as f64) / (u + d) as f64)
    }

    /// Bin center.
    pub fn center(&self, ix: usize, iy: usize) -> [f64; 2] {
        let g = self.resolution as f64;
        [
            (ix as f64 + 0.5) * self.cell.lx / g,
            (iy as f64 + 0.5) * self.cell.ly / g,
        ]
    }

    /// Bin containing `p`, as `(ix, iy)`.
    pub fn index_of(&self, p: [f64; 2]) -> (usize, usize) {
        let b = self.bin(p);
        (b % self.resolution, b / self.resolution)
    }

    /// CSV with columns `x, y, n_up, n_down`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,n_up,n_down")?;
        for iy in 0..self.resolution {
            for ix in 0..self.resolution {
                let [x, y] = self.center(ix, iy);
                let (u, d) = self.density(ix, iy);
                writeln!(w, "{x},{y},{u},{d}")?;
            }
        }
        Ok(())
    }
}
