//! The `ATNS` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ATNS" | u32 version (=1) | u32 ndim | ndim x u32 dims | f32 payload (row-major)
//! ```
//!
//! The file length must equal exactly what the header implies.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ATNS";
pub const VERSION: u32 = 1;

/// A decoded container: shape plus `f32` payload.
#[derive(Debug, Clone, PartialEq)]
pub struct AtnsTensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl AtnsTensor {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().map(|&d| d as usize).product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_f64(dims: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(
            dims.iter().map(|&d| d as u32).collect(),
            data.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn shape(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d as usize).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes a buffer; `origin` only labels errors.
    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0, origin };
        if cur.take(4)? != MAGIC {
            return Err(Error::parse(origin, "bad magic (expected \"ATNS\")"));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::parse(
                origin,
                format!("unsupported version {version} (expected {VERSION})"),
            ));
        }
        let ndim = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            dims.push(cur.u32()?);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| Error::parse(origin, "dimension product overflows"))?;
        let expected = n
            .checked_mul(4)
            .and_then(|b| b.checked_add(cur.pos))
            .ok_or_else(|| Error::parse(origin, "dimension product overflows"))?;
        if bytes.len() < expected {
            return Err(Error::parse(
                origin,
                format!("unexpected EOF: header implies {expected} bytes, file has {}", bytes.len()),
            ));
        }
        if bytes.len() > expected {
            return Err(Error::parse(
                origin,
                format!("trailing data: header implies {expected} bytes, file has {}", bytes.len()),
            ));
        }
        let data = bytes[cur.pos..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(self.origin, "unexpected EOF in header"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn write(path: &Path, tensor: &AtnsTensor) -> Result<()> {
    fs::write(path, tensor.encode())?;
    Ok(())
}

pub fn read(path: &Path) -> Result<AtnsTensor> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile {
                path: path.to_path_buf(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    AtnsTensor::decode(&bytes, path)
}

/// Reads a container and checks it has the expected shape.
pub fn read_shaped(path: &Path, shape: &[usize]) -> Result<AtnsTensor> {
    let t = read(path)?;
    if t.shape() != shape {
        return Err(Error::parse(
            path,
            format!("dimension mismatch: expected {shape:?}, found {:?}", t.shape()),
        ));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = AtnsTensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let bytes = t.encode();
        let mut expected = b"ATNS".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(AtnsTensor::decode(&bytes, Path::new("x")).unwrap(), t);
    }

    #[test]
    fn truncated_payload_is_unexpected_eof() {
        let t = AtnsTensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut bytes = t.encode();
        bytes.truncate(bytes.len() - 2);
        let err = AtnsTensor::decode(&bytes, Path::new("cam0.atns")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unexpected EOF"), "{msg}");
        assert!(msg.contains("cam0.atns"), "{msg}");
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let mut bytes = AtnsTensor::new(vec![1], vec![0.0]).unwrap().encode();
        bytes[0] = b'X';
        assert!(AtnsTensor::decode(&bytes, Path::new("a")).unwrap_err().to_string().contains("magic"));
        let mut bytes = AtnsTensor::new(vec![1], vec![0.0]).unwrap().encode();
        bytes[4] = 2;
        assert!(AtnsTensor::decode(&bytes, Path::new("a")).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = AtnsTensor::new(vec![1], vec![0.0]).unwrap().encode();
        bytes.push(0);
        assert!(AtnsTensor::decode(&bytes, Path::new("a")).is_err());
    }
}
