//! PQT1 tensor files.
//!
//! Layout (little-endian):
//!
//! ```text
//! 0..4   magic "PQT1"
//! 4      dtype: 0 = f32, 1 = f64
//! 5      ndim, always 2
//! 6..8   reserved, zero
//! 8..    ndim u64 dims
//! ...    row-major payload
//! ```
//!
//! f32 payloads are widened to f64 on load.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"PQT1";
const HEADER_LEN: usize = 8 + 2 * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub fn encode_tensor(m: &Matrix, dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.data().len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[dtype.code(), 2, 0, 0]);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    match dtype {
        DType::F32 => m
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => m.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(Error::TruncatedPayload);
    }
    let dtype = match bytes[4] {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(Error::BadHeader(format!("unknown dtype {other}"))),
    };
    if bytes[5] != 2 {
        return Err(Error::BadHeader(format!("ndim must be 2, got {}", bytes[5])));
    }
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(Error::BadHeader("reserved bytes are not zero".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload);
    }
    let dim = |i: usize| -> Result<usize> {
        let raw = u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes"));
        usize::try_from(raw).map_err(|_| Error::DimOverflow)
    };
    let (rows, cols) = (dim(0)?, dim(1)?);
    let payload_len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(dtype.width()))
        .ok_or(Error::DimOverflow)?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != payload_len {
        return Err(Error::TruncatedPayload);
    }
    let data: Vec<f64> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    Matrix::new(rows, cols, data)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

pub fn save_tensor(path: impl AsRef<Path>, m: &Matrix, dtype: DType) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(m, dtype)).map_err(|e| Error::io(path, e))
}
