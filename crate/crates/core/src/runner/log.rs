//! Per-step energy records and their CSV form.

use std::io::{BufRead, Write};

use crate::error::{Result, VmcError};

pub const LOG_HEADER: &str =
    "step,energy_mean,energy_stderr,variance,acceptance_coord,acceptance_spin,learning_rate,wall_ms";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyRecord {
    pub step: u64,
    pub energy_mean: f64,
    pub energy_stderr: f64,
    pub variance: f64,
    pub acceptance_coord: f64,
    pub acceptance_spin: f64,
    pub learning_rate: f64,
    pub wall_ms: f64,
}

impl EnergyRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.energy_mean,
            self.energy_stderr,
            self.variance,
            self.acceptance_coord,
            self.acceptance_spin,
            self.learning_rate,
            self.wall_ms
        )
    }

    /// Everything but the wall time, which differs between identical runs.
    pub fn same_numbers(&self, other: &Self) -> bool {
        Self {
            wall_ms: 0.0,
            ..*self
        } == Self {
            wall_ms: 0.0,
            ..*other
        }
    }

    fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(VmcError::Config(format!(
                "log row has {} fields: {line}",
                f.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].trim()
                .parse()
                .map_err(|_| VmcError::Config(format!("bad number {:?} in log", f[i])))
        };
        Ok(Self {
            step: f[0]
                .trim()
                .parse()
                .map_err(|_| VmcError::Config(format!("bad step {:?} in log", f[0])))?,
            energy_mean: num(1)?,
            energy_stderr: num(2)?,
            variance: num(3)?,
            acceptance_coord: num(4)?,
            acceptance_spin: num(5)?,
            learning_rate: num(6)?,
            wall_ms: num(7)?,
        })
    }
}

pub fn write_header<W: Write>(mut w: W) -> std::io::Result<()> {
    writeln!(w, "{LOG_HEADER}")
}

pub fn read_log<R: BufRead>(r: R) -> Result<Vec<EnergyRecord>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != LOG_HEADER {
        return Err(VmcError::Config("energy log header missing".into()));
    }
    lines
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| EnergyRecord::parse(&l?))
        .collect()
}

/// Trailing mean over `window` points; the first `window − 1` entries average
/// what is available.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, x) in series.iter().enumerate() {
        sum += x;
        if i >= w {
            sum -= series[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// Moving average of `energy_mean` over a log.
pub fn report_moving_average(log: &[EnergyRecord], window: usize) -> Vec<f64> {
    moving_average(
        &log.iter().map(|r| r.energy_mean).collect::<Vec<_>>(),
        window,
    )
}
