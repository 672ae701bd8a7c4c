//! Packed-weight container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    [u8; 4]  "QSLW"
//! version  u16
//! bits     u8
//! codebook u8       0 = uniform, 1 = NF4
//! group    u32
//! rows     u32
//! cols     u32
//! per group (row-major group order): scale f32, zero point u8
//! nibbles  ceil(rows * cols / 2) bytes, codes in row-major order
//! ```
//!
//! For NF4 the per-group scale is the absmax and the zero point is 0.

use std::io::{Read, Write};

use crate::error::{config_err, Error, Result};
use crate::numerics::Matrix;

use super::{
    init_uniform_params, nf4_quantize, pack_nibbles, partition_groups, unpack_nibbles,
    Nf4Codebook, QuantParams,
};

pub const CONTAINER_MAGIC: [u8; 4] = *b"QSLW";
pub const CONTAINER_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Codebook {
    Uniform,
    Nf4,
}

impl Codebook {
    fn tag(self) -> u8 {
        match self {
            Codebook::Uniform => 0,
            Codebook::Nf4 => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Codebook::Uniform),
            1 => Ok(Codebook::Nf4),
            t => Err(Error::Format(format!("unknown codebook tag {t}"))),
        }
    }
}

impl std::str::FromStr for Codebook {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Codebook::Uniform),
            "nf4" => Ok(Codebook::Nf4),
            other => config_err(format!("unknown codebook {other:?}, expected uniform or nf4")),
        }
    }
}

/// One quantized weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedTensor {
    pub codebook: Codebook,
    pub bits: u8,
    pub group_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub scales: Vec<f32>,
    pub zero_points: Vec<u8>,
    pub packed: Vec<u8>,
}

impl PackedTensor {
    /// Uniform quantization with clip-searched parameters. Step sizes are
    /// rounded to `f32` before encoding so the stored values reproduce the codes.
    pub fn quantize_uniform(weight: &Matrix, g: usize, bits: u8, clip_grid: &[f64]) -> Result<Self> {
        if bits > 4 {
            return config_err(format!("container stores nibbles; bit width {bits} > 4"));
        }
        let groups = partition_groups(weight, g)?;
        let mut scales = Vec::with_capacity(groups.len());
        let mut zero_points = Vec::with_capacity(groups.len());
        let mut codes = Vec::with_capacity(weight.rows() * weight.cols());
        for group in &groups {
            let p = init_uniform_params(group.values, bits, clip_grid)?;
            let stored = QuantParams::new(p.delta as f32 as f64, p.zp, bits)?;
            scales.push(stored.delta as f32);
            zero_points.push(stored.zp as u8);
            codes.extend(group.values.iter().map(|&w| stored.encode(w).0));
        }
        Ok(Self {
            codebook: Codebook::Uniform,
            bits,
            group_size: g,
            rows: weight.rows(),
            cols: weight.cols(),
            scales,
            zero_points,
            packed: pack_nibbles(&codes)?,
        })
    }

    pub fn quantize_nf4(weight: &Matrix, g: usize, codebook: &Nf4Codebook) -> Result<Self> {
        let groups = partition_groups(weight, g)?;
        let mut scales = Vec::with_capacity(groups.len());
        let mut codes = Vec::with_capacity(weight.rows() * weight.cols());
        for group in &groups {
            // absmax goes through f32 first so decoding matches the stored scale
            let absmax = group.values.iter().fold(0.0f64, |m, v| m.max(v.abs())) as f32 as f64;
            let (c, used) = if absmax == 0.0 {
                nf4_quantize(group.values, codebook)?
            } else {
                let normalized: Vec<f64> = group.values.iter().map(|v| v / absmax).collect();
                let (c, _) = nf4_quantize(&normalized, codebook)?;
                (c, absmax)
            };
            scales.push(used as f32);
            codes.extend(c);
        }
        Ok(Self {
            codebook: Codebook::Nf4,
            bits: 4,
            group_size: g,
            rows: weight.rows(),
            cols: weight.cols(),
            zero_points: vec![0; scales.len()],
            scales,
            packed: pack_nibbles(&codes)?,
        })
    }

    pub fn group_count(&self) -> usize {
        self.rows * (self.cols / self.group_size)
    }

    pub fn codes(&self) -> Result<Vec<u8>> {
        unpack_nibbles(&self.packed, self.rows * self.cols)
    }

    pub fn dequantize(&self, nf4: &Nf4Codebook) -> Result<Matrix> {
        let codes = self.codes()?;
        let mut data = Vec::with_capacity(codes.len());
        for (i, chunk) in codes.chunks(self.group_size).enumerate() {
            let scale = self.scales[i] as f64;
            match self.codebook {
                Codebook::Uniform => {
                    let p = QuantParams::new(scale, self.zero_points[i] as u32, self.bits)?;
                    data.extend(chunk.iter().map(|&c| p.decode(c)));
                }
                Codebook::Nf4 => data.extend(chunk.iter().map(|&c| nf4.level(c) * scale)),
            }
        }
        Matrix::from_vec(self.rows, self.cols, data)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&CONTAINER_MAGIC)?;
        w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
        w.write_all(&[self.bits, self.codebook.tag()])?;
        for v in [self.group_size, self.rows, self.cols] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for (s, z) in self.scales.iter().zip(&self.zero_points) {
            w.write_all(&s.to_le_bytes())?;
            w.write_all(&[*z])?;
        }
        w.write_all(&self.packed)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads one container. Returns `Ok(None)` at a clean end of input.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Self>> {
        let mut magic = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            let n = r.read(&mut magic[got..])?;
            if n == 0 {
                break;
            }
            got += n;
        }
        if got == 0 {
            return Ok(None);
        }
        if got < 4 || magic != CONTAINER_MAGIC {
            return Err(Error::Format("bad packed-weight magic".into()));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2).map_err(truncated)?;
        let version = u16::from_le_bytes(b2);
        if version != CONTAINER_VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        r.read_exact(&mut b2).map_err(truncated)?;
        let (bits, codebook) = (b2[0], Codebook::from_tag(b2[1])?);
        let mut b4 = [0u8; 4];
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            r.read_exact(&mut b4).map_err(truncated)?;
            *d = u32::from_le_bytes(b4) as usize;
        }
        let [group_size, rows, cols] = dims;
        if !(2..=4).contains(&bits) || group_size == 0 || cols % group_size != 0 {
            return Err(Error::Format(format!(
                "inconsistent header: bits {bits}, group {group_size}, cols {cols}"
            )));
        }
        let groups = rows * (cols / group_size);
        let mut scales = Vec::with_capacity(groups);
        let mut zero_points = Vec::with_capacity(groups);
        let mut rec = [0u8; 5];
        for _ in 0..groups {
            r.read_exact(&mut rec).map_err(truncated)?;
            scales.push(f32::from_le_bytes([rec[0], rec[1], rec[2], rec[3]]));
            zero_points.push(rec[4]);
        }
        let mut packed = vec![0u8; (rows * cols).div_ceil(2)];
        r.read_exact(&mut packed).map_err(truncated)?;
        Ok(Some(Self {
            codebook,
            bits,
            group_size,
            rows,
            cols,
            scales,
            zero_points,
            packed,
        }))
    }

    /// Parses a byte buffer holding one or more back-to-back containers.
    pub fn read_all(bytes: &[u8]) -> Result<Vec<Self>> {
        let mut cursor = bytes;
        let mut out = Vec::new();
        while let Some(t) = Self::read_from(&mut cursor)? {
            out.push(t);
        }
        Ok(out)
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated packed-weight container".into())
    } else {
        Error::Io(e)
    }
}
