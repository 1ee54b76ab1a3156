//! Binary field dumps: "GPOB", u32 version, u32 n_radial, u32 n_angular,
//! u8 is_complex, then little-endian f64 values (radial index outermost),
//! complex values interleaved (re, im).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GPOB";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl FieldData {
    pub fn len(&self) -> usize {
        match self {
            FieldData::Real(v) => v.len(),
            FieldData::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub n_radial: usize,
    pub n_angular: usize,
    pub data: FieldData,
}

pub fn write_field_to<W: Write>(mut w: W, n_radial: usize, n_angular: usize, data: &FieldData) -> Result<()> {
    if data.len() != n_radial * n_angular {
        return Err(Error::DimensionMismatch { expected: n_radial * n_angular, got: data.len() });
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(n_radial as u32).to_le_bytes())?;
    w.write_all(&(n_angular as u32).to_le_bytes())?;
    match data {
        FieldData::Real(v) => {
            w.write_all(&[0u8])?;
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        FieldData::Complex(v) => {
            w.write_all(&[1u8])?;
            for z in v {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_field(path: &Path, n_radial: usize, n_angular: usize, data: &FieldData) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_field_to(BufWriter::new(f), n_radial, n_angular, data)
}

pub fn read_field_from<R: Read>(mut r: R) -> Result<FieldDump> {
    let mut head = [0u8; 17];
    r.read_exact(&mut head).map_err(|e| Error::Format(format!("header: {e}")))?;
    if &head[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().unwrap());
    if u32_at(4) != VERSION {
        return Err(Error::Format(format!("unsupported version {}", u32_at(4))));
    }
    let n_radial = u32_at(8) as usize;
    let n_angular = u32_at(12) as usize;
    let complex = match head[16] {
        0 => false,
        1 => true,
        b => return Err(Error::Format(format!("bad complex flag {b}"))),
    };
    let n = n_radial * n_angular;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let per = if complex { 16 } else { 8 };
    if bytes.len() != n * per {
        return Err(Error::Format(format!("expected {} payload bytes, found {}", n * per, bytes.len())));
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let data = if complex {
        FieldData::Complex(vals.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
    } else {
        FieldData::Real(vals)
    };
    Ok(FieldDump { n_radial, n_angular, data })
}

pub fn read_field(path: &Path) -> Result<FieldDump> {
    let f = File::open(path).map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    read_field_from(BufReader::new(f))
}

/// Formats a float with 17 significant digits; non-finite values become `null`.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{:.16e}", x)
    } else {
        "null".to_string()
    }
}
