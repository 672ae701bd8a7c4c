//! Checkpoint file.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    [u8; 4]  "QSCK"
//! version  u16
//! config   u32 length + UTF-8 text (canonical run config)
//! step     u64
//! vision, projector w1 b1 w2 b2, embedding, final gain, final bias
//! per block: ln1 gain, ln1 bias, ln2 gain, ln2 bias, then six linears
//! per linear: tag u8 (0 dense, 1 quantized), weight matrix, and when quantized
//!             group u32 and per group: Δ f64, zp u8, bits u8, scale f64
//! optimizer u8 flag; when 1: projector velocity w1 b1 w2 b2, then one
//!           scale-velocity vector per linear
//! ```
//!
//! Matrices are `rows u32, cols u32` followed by row-major f64 values;
//! vectors are `len u32` followed by f64 values.

use std::io::{Read, Write};
use std::path::Path;

use super::config::RunConfig;
use super::io::write_atomic;
use crate::error::{Error, Result};
use crate::model::{Block, Linear, ModelState, Optimizer, Projector, ProjectorGrads, LINEARS_PER_BLOCK};
use crate::numerics::Matrix;
use crate::quant::QuantParams;
use crate::scale_learn::ScaledQuantLinear;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"QSCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub state: ModelState,
    pub optimizer: Option<Optimizer>,
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.0.write_all(&[v])?;
        Ok(())
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
        self.0.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        for x in v {
            self.0.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    fn vec(&mut self, v: &[f64]) -> Result<()> {
        self.u32(v.len())?;
        self.f64s(v)
    }

    fn matrix(&mut self, m: &Matrix) -> Result<()> {
        self.u32(m.rows())?;
        self.u32(m.cols())?;
        self.f64s(m.data())
    }

    fn linear(&mut self, l: &Linear) -> Result<()> {
        match l {
            Linear::Dense(w) => {
                self.u8(0)?;
                self.matrix(w)
            }
            Linear::Quant(q) => {
                self.u8(1)?;
                self.matrix(q.weight())?;
                self.u32(q.group_size())?;
                for (p, s) in q.params().iter().zip(q.scales()) {
                    self.f64s(&[p.delta])?;
                    self.u8(p.zp as u8)?;
                    self.u8(p.bits)?;
                    self.f64s(&[*s])?;
                }
                Ok(())
            }
        }
    }
}

struct Reader<R: Read>(R);

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated checkpoint".into())
    } else {
        Error::Io(e)
    }
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(truncated)?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn vec(&mut self, expect: usize) -> Result<Vec<f64>> {
        let n = self.u32()?;
        if n != expect {
            return Err(Error::Format(format!("vector of {n}, expected {expect}")));
        }
        self.f64s(n)
    }

    fn matrix(&mut self, shape: (usize, usize)) -> Result<Matrix> {
        let (r, c) = (self.u32()?, self.u32()?);
        if (r, c) != shape {
            return Err(Error::Format(format!("matrix {r}x{c}, expected {}x{}", shape.0, shape.1)));
        }
        Matrix::from_vec(r, c, self.f64s(r * c)?)
    }

    fn linear(&mut self, shape: (usize, usize)) -> Result<Linear> {
        match self.u8()? {
            0 => Ok(Linear::Dense(self.matrix(shape)?)),
            1 => {
                let w = self.matrix(shape)?;
                let g = self.u32()?;
                if g == 0 || shape.1 % g != 0 {
                    return Err(Error::Format(format!("group size {g} for {} inputs", shape.1)));
                }
                let groups = shape.0 * shape.1 / g;
                let mut params = Vec::with_capacity(groups);
                let mut scales = Vec::with_capacity(groups);
                for _ in 0..groups {
                    let delta = self.f64()?;
                    let (zp, bits) = (self.u8()?, self.u8()?);
                    params.push(QuantParams::new(delta, zp as u32, bits).map_err(|e| Error::Format(e.to_string()))?);
                    scales.push(self.f64()?);
                }
                let q = ScaledQuantLinear::from_parts(w, g, params, scales, None)
                    .map_err(|e| Error::Format(e.to_string()))?;
                Ok(Linear::Quant(q))
            }
            t => Err(Error::Format(format!("unknown linear tag {t}"))),
        }
    }
}

impl Checkpoint {
    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let mut w = Writer(out);
        w.0.write_all(&CHECKPOINT_MAGIC)?;
        w.0.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let text = self.config.render();
        w.u32(text.len())?;
        w.0.write_all(text.as_bytes())?;
        w.0.write_all(&self.step.to_le_bytes())?;

        let s = &self.state;
        w.matrix(&s.vision)?;
        w.matrix(&s.projector.w1)?;
        w.vec(&s.projector.b1)?;
        w.matrix(&s.projector.w2)?;
        w.vec(&s.projector.b2)?;
        w.matrix(&s.embedding)?;
        w.vec(&s.final_gain)?;
        w.vec(&s.final_bias)?;
        for b in &s.blocks {
            for v in [&b.ln1_gain, &b.ln1_bias, &b.ln2_gain, &b.ln2_bias] {
                w.vec(v)?;
            }
            for l in &b.linears {
                w.linear(l)?;
            }
        }
        match &self.optimizer {
            None => w.u8(0)?,
            Some(o) => {
                w.u8(1)?;
                let v = &o.projector_velocity;
                w.matrix(&v.w1)?;
                w.vec(&v.b1)?;
                w.matrix(&v.w2)?;
                w.vec(&v.b2)?;
                for sv in &o.scale_velocity {
                    w.vec(sv)?;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let ck = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", cursor.len())));
        }
        Ok(ck)
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let mut r = Reader(input);
        if r.bytes::<4>()? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = u16::from_le_bytes(r.bytes()?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()?;
        let mut text = vec![0u8; len];
        r.0.read_exact(&mut text).map_err(truncated)?;
        let text = String::from_utf8(text).map_err(|_| Error::Format("config echo is not UTF-8".into()))?;
        let config = RunConfig::parse(&text).map_err(|e| Error::Format(format!("config echo: {e}")))?;
        let step = u64::from_le_bytes(r.bytes()?);

        let c = &config.model;
        let (d, h) = (c.d_model, c.projector_hidden);
        let vision = r.matrix((c.d_vision, c.patch_dim()))?;
        let projector = Projector {
            w1: r.matrix((h, c.d_vision))?,
            b1: r.vec(h)?,
            w2: r.matrix((d, h))?,
            b2: r.vec(d)?,
        };
        let embedding = r.matrix((c.vocab, d))?;
        let final_gain = r.vec(d)?;
        let final_bias = r.vec(d)?;
        let shapes = c.linear_shapes();
        let mut blocks = Vec::with_capacity(c.n_layers);
        for b in 0..c.n_layers {
            let (ln1_gain, ln1_bias, ln2_gain, ln2_bias) = (r.vec(d)?, r.vec(d)?, r.vec(d)?, r.vec(d)?);
            let linears = shapes[b * LINEARS_PER_BLOCK..(b + 1) * LINEARS_PER_BLOCK]
                .iter()
                .map(|&s| r.linear(s))
                .collect::<Result<Vec<_>>>()?;
            blocks.push(Block { ln1_gain, ln1_bias, ln2_gain, ln2_bias, linears });
        }
        let state = ModelState {
            config: c.clone(),
            vision,
            projector,
            embedding,
            blocks,
            final_gain,
            final_bias,
        };

        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let projector_velocity = ProjectorGrads {
                    w1: r.matrix((h, c.d_vision))?,
                    b1: r.vec(h)?,
                    w2: r.matrix((d, h))?,
                    b2: r.vec(d)?,
                };
                let scale_velocity = state
                    .linears()
                    .map(|l| match l.as_quant() {
                        Some(q) => r.vec(q.scale_count()),
                        None => Err(Error::Format("optimizer state for a dense backbone".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(Optimizer {
                    config: config.sgd,
                    projector_velocity,
                    scale_velocity,
                })
            }
            t => return Err(Error::Format(format!("unknown optimizer flag {t}"))),
        };
        Ok(Self { config, step, state, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
