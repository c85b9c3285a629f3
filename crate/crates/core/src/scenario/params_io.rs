//! Little-endian binary files for policy means, covariance factors and
//! search iterates.
//!
//! ```text
//! vector   : b"RAREVEC1" | u64 len | len × f64
//! cholesky : b"RARECHL1" | u64 d   | d(d+1)/2 × f64   (lower triangle, row-major)
//! params   : b"RAREPRM1" | u32 blocks | per block:
//!              u8 0 (beta)     | f64 alpha | f64 beta
//!              u8 1 (gaussian) | u64 d     | d × f64 mu
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expfam::{BlockParams, ParamPoint};

pub const VECTOR_MAGIC: &[u8; 8] = b"RAREVEC1";
pub const CHOLESKY_MAGIC: &[u8; 8] = b"RARECHL1";
pub const PARAMS_MAGIC: &[u8; 8] = b"RAREPRM1";

#[derive(Debug, Error)]
pub enum BinaryError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic header (expected {expected:?})")]
    Magic { expected: String },
    #[error("truncated file: needed {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("unknown block tag {0}")]
    BlockTag(u8),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 8]) -> Result<Self, BinaryError> {
        if buf.len() < 8 || &buf[..8] != magic {
            return Err(BinaryError::Magic {
                expected: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        Ok(Reader { buf, pos: 8 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], BinaryError> {
        if self.buf.len() - self.pos < n {
            return Err(BinaryError::Truncated {
                needed: self.pos + n,
                have: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, BinaryError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, BinaryError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, BinaryError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, BinaryError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, BinaryError> {
        let n = self.u64()? as usize;
        // a length can never exceed the bytes left
        if n > self.buf.len() {
            return Err(BinaryError::Truncated {
                needed: n,
                have: self.buf.len(),
            });
        }
        Ok(n)
    }

    fn finish(self) -> Result<(), BinaryError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(BinaryError::Trailing(n)),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, BinaryError> {
    fs::read(path).map_err(|source| BinaryError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), BinaryError> {
    fs::write(path, bytes).map_err(|source| BinaryError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn encode_vector(v: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * v.len());
    out.extend_from_slice(VECTOR_MAGIC);
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_vector(buf: &[u8]) -> Result<Vec<f64>, BinaryError> {
    let mut r = Reader::new(buf, VECTOR_MAGIC)?;
    let n = r.len()?;
    let v = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    Ok(v)
}

pub fn encode_cholesky(l: &DMatrix<f64>) -> Vec<u8> {
    let d = l.nrows();
    let mut out = Vec::with_capacity(16 + 4 * d * (d + 1));
    out.extend_from_slice(CHOLESKY_MAGIC);
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for i in 0..d {
        for j in 0..=i {
            out.extend_from_slice(&l[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn decode_cholesky(buf: &[u8]) -> Result<DMatrix<f64>, BinaryError> {
    let mut r = Reader::new(buf, CHOLESKY_MAGIC)?;
    let d = r.len()?;
    let mut l = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            l[(i, j)] = r.f64()?;
        }
    }
    r.finish()?;
    Ok(l)
}

pub fn encode_params(theta: &ParamPoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&(theta.0.len() as u32).to_le_bytes());
    for block in &theta.0 {
        match block {
            BlockParams::Beta { alpha, beta } => {
                out.push(0);
                out.extend_from_slice(&alpha.to_le_bytes());
                out.extend_from_slice(&beta.to_le_bytes());
            }
            BlockParams::Gaussian { mu } => {
                out.push(1);
                out.extend_from_slice(&(mu.len() as u64).to_le_bytes());
                for m in mu {
                    out.extend_from_slice(&m.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn decode_params(buf: &[u8]) -> Result<ParamPoint, BinaryError> {
    let mut r = Reader::new(buf, PARAMS_MAGIC)?;
    let n = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        match r.u8()? {
            0 => blocks.push(BlockParams::Beta {
                alpha: r.f64()?,
                beta: r.f64()?,
            }),
            1 => {
                let d = r.len()?;
                let mu = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
                blocks.push(BlockParams::Gaussian { mu });
            }
            tag => return Err(BinaryError::BlockTag(tag)),
        }
    }
    r.finish()?;
    Ok(ParamPoint(blocks))
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>, BinaryError> {
    decode_vector(&read_file(path)?)
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<(), BinaryError> {
    write_file(path, &encode_vector(v))
}

pub fn read_cholesky(path: &Path) -> Result<DMatrix<f64>, BinaryError> {
    decode_cholesky(&read_file(path)?)
}

pub fn write_cholesky(path: &Path, l: &DMatrix<f64>) -> Result<(), BinaryError> {
    write_file(path, &encode_cholesky(l))
}

pub fn read_params(path: &Path) -> Result<ParamPoint, BinaryError> {
    decode_params(&read_file(path)?)
}

pub fn write_params(path: &Path, theta: &ParamPoint) -> Result<(), BinaryError> {
    write_file(path, &encode_params(theta))
}
