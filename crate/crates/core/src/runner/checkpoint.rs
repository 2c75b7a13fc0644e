//! Versioned little-endian binary checkpoints holding everything needed to
//! continue a run bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use crate::ansatz::{ModelGeometry, NetworkParams, ParticleConfiguration, SimulationBox};
use crate::error::{Result, VmcError};
use crate::mcmc::{ChainStats, RngState, WalkerBatch};
use crate::optimize::BlockFactor;

pub const MAGIC: &[u8; 8] = b"SPINVMC\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WalkerState {
    pub config: ParticleConfiguration,
    pub rng: RngState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Optimizer steps completed.
    pub step: u64,
    pub sigma: f64,
    /// The run configuration, as TOML.
    pub config_toml: String,
    pub params: NetworkParams,
    pub kfac: Option<(f64, Vec<BlockFactor>)>,
    pub walkers: Vec<WalkerState>,
    pub stats: ChainStats,
}

impl Checkpoint {
    pub fn walker_states(batch: &WalkerBatch) -> Vec<WalkerState> {
        batch
            .walkers()
            .iter()
            .map(|w| WalkerState {
                config: w.config().clone(),
                rng: w.rng_state(),
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // Write to a sibling file and rename so a crash never leaves a torn
        // checkpoint behind.
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            self.write(&mut f)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(&mut f)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut e = Enc(w);
        e.bytes(MAGIC)?;
        e.u32(FORMAT_VERSION)?;
        e.u64(self.step)?;
        e.f64(self.sigma)?;
        e.str(&self.config_toml)?;
        let g = self.params.geometry();
        for v in [
            g.n_electrons,
            g.d_model,
            g.d_attn,
            g.d_attn_vals,
            g.n_heads,
            g.n_layers,
            g.n_mlp_per_layer,
            g.n_det,
        ] {
            e.u64(v as u64)?;
        }
        e.f64(g.cell.lx)?;
        e.f64(g.cell.ly)?;
        e.f64s(self.params.as_slice())?;
        match &self.kfac {
            None => e.u8(0)?,
            Some((decay, blocks)) => {
                e.u8(1)?;
                e.f64(*decay)?;
                e.u64(blocks.len() as u64)?;
                for b in blocks {
                    e.u64(b.in_dim as u64)?;
                    e.u64(b.out_dim as u64)?;
                    e.f64s(&b.a)?;
                    e.f64s(&b.g)?;
                }
            }
        }
        e.u64(self.walkers.len() as u64)?;
        for ws in &self.walkers {
            for p in ws.config.positions() {
                e.f64(p[0])?;
                e.f64(p[1])?;
            }
            for s in ws.config.spins() {
                e.u8(*s as u8)?;
            }
            e.bytes(&ws.rng.seed)?;
            e.u64(ws.rng.stream)?;
            e.bytes(&ws.rng.word_pos.to_le_bytes())?;
        }
        let s = &self.stats;
        for v in [
            s.coordinate_proposed,
            s.coordinate_accepted,
            s.spin_proposed,
            s.spin_accepted,
            s.steps,
        ] {
            e.u64(v)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut d = Dec(r);
        let mut magic = [0u8; 8];
        d.fill(&mut magic)?;
        if &magic != MAGIC {
            return Err(VmcError::Checkpoint("not a checkpoint file".into()));
        }
        let version = d.u32()?;
        if version != FORMAT_VERSION {
            return Err(VmcError::Checkpoint(format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let step = d.u64()?;
        let sigma = d.f64()?;
        let config_toml = d.str()?;
        let mut dims = [0usize; 8];
        for v in &mut dims {
            *v = d.len()?;
        }
        let cell = SimulationBox::new(d.f64()?, d.f64()?)
            .map_err(|e| VmcError::Checkpoint(format!("bad cell: {e}")))?;
        let geometry = ModelGeometry {
            n_electrons: dims[0],
            cell,
            d_model: dims[1],
            d_attn: dims[2],
            d_attn_vals: dims[3],
            n_heads: dims[4],
            n_layers: dims[5],
            n_mlp_per_layer: dims[6],
            n_det: dims[7],
        };
        let params = NetworkParams::from_flat(geometry, d.f64s()?)
            .map_err(|e| VmcError::Checkpoint(format!("bad parameters: {e}")))?;
        let kfac = match d.u8()? {
            0 => None,
            1 => {
                let decay = d.f64()?;
                let n = d.len()?;
                let mut blocks = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    let (in_dim, out_dim) = (d.len()?, d.len()?);
                    let (a, g) = (d.f64s()?, d.f64s()?);
                    if a.len() != in_dim * in_dim || g.len() != out_dim * out_dim {
                        return Err(VmcError::Checkpoint(
                            "curvature factor has the wrong size".into(),
                        ));
                    }
                    blocks.push(BlockFactor {
                        in_dim,
                        out_dim,
                        a,
                        g,
                    });
                }
                Some((decay, blocks))
            }
            t => return Err(VmcError::Checkpoint(format!("bad optimizer tag {t}"))),
        };
        let n_walkers = d.len()?;
        let n = params.geometry().n_electrons;
        let mut walkers = Vec::with_capacity(n_walkers.min(1 << 20));
        for _ in 0..n_walkers {
            let mut pos = Vec::with_capacity(n);
            for _ in 0..n {
                pos.push([d.f64()?, d.f64()?]);
            }
            let mut spins = Vec::with_capacity(n);
            for _ in 0..n {
                spins.push(d.u8()? as i8);
            }
            let config = ParticleConfiguration::new(cell, pos, spins)
                .map_err(|e| VmcError::Checkpoint(format!("bad walker: {e}")))?;
            let mut seed = [0u8; 32];
            d.fill(&mut seed)?;
            let stream = d.u64()?;
            let mut wp = [0u8; 16];
            d.fill(&mut wp)?;
            walkers.push(WalkerState {
                config,
                rng: RngState {
                    seed,
                    stream,
                    word_pos: u128::from_le_bytes(wp),
                },
            });
        }
        let stats = ChainStats {
            coordinate_proposed: d.u64()?,
            coordinate_accepted: d.u64()?,
            spin_proposed: d.u64()?,
            spin_accepted: d.u64()?,
            steps: d.u64()?,
        };
        Ok(Self {
            step,
            sigma,
            config_toml,
            params,
            kfac,
            walkers,
            stats,
        })
    }
}

struct Enc<'a, W: Write>(&'a mut W);

impl<W: Write> Enc<'_, W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        Ok(self.0.write_all(b)?)
    }
    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        self.u64(v.len() as u64)?;
        v.iter().try_for_each(|x| self.f64(*x))
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.u64(s.len() as u64)?;
        self.bytes(s.as_bytes())
    }
}

struct Dec<'a, R: Read>(&'a mut R);

impl<R: Read> Dec<'_, R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.0.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                VmcError::Checkpoint("truncated checkpoint".into())
            }
            _ => e.into(),
        })
    }
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| VmcError::Checkpoint("length overflows".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        let mut v = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            v.push(self.f64()?);
        }
        Ok(v)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        let mut b = Vec::with_capacity(n.min(1 << 20));
        self.0.take(n as u64).read_to_end(&mut b)?;
        if b.len() != n {
            return Err(VmcError::Checkpoint("truncated checkpoint".into()));
        }
        String::from_utf8(b).map_err(|_| VmcError::Checkpoint("config text is not UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{init_params, tiny_geometry};

    fn sample() -> Checkpoint {
        let params = init_params(&tiny_geometry(2, 3.0), 4).unwrap();
        let cell = params.geometry().cell;
        let walkers = (0..3)
            .map(|k| WalkerState {
                config: ParticleConfiguration::new(
                    cell,
                    vec![[0.1 * k as f64, 1.0], [2.0, 0.5]],
                    vec![1, -1],
                )
                .unwrap(),
                rng: RngState {
                    seed: [k as u8; 32],
                    stream: k,
                    word_pos: (1u128 << 70) + k as u128,
                },
            })
            .collect();
        Checkpoint {
            step: 17,
            sigma: 0.37,
            config_toml: "seed = 3\n".into(),
            params,
            kfac: Some((0.95, vec![BlockFactor::identity(2, 3)])),
            walkers,
            stats: ChainStats {
                coordinate_proposed: 9,
                coordinate_accepted: 4,
                spin_proposed: 2,
                spin_accepted: 1,
                steps: 3,
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        assert_eq!(Checkpoint::read(&mut buf.as_slice()).unwrap(), c);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        let mut buf = Vec::new();
        sample().write(&mut buf).unwrap();
        assert!(matches!(
            Checkpoint::read(&mut &buf[..buf.len() - 3]),
            Err(VmcError::Checkpoint(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::read(&mut bad.as_slice()),
            Err(VmcError::Checkpoint(_))
        ));
        let mut newer = buf;
        newer[8] = 9;
        assert!(matches!(
            Checkpoint::read(&mut newer.as_slice()),
            Err(VmcError::Checkpoint(_))
        ));
    }
}
