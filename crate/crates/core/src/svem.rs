//! SVEM embedding matrix files.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                       |
//! |--------|------|-----------------------------|
//! | 0      | 4    | magic `b"SVEM"`             |
//! | 4      | 2    | version, `u16` = 1          |
//! | 6      | 2    | flags, `u16` = 0            |
//! | 8      | 8    | row count, `u64`            |
//! | 16     | 4    | dim, `u32`                  |
//! | 20     | 4    | reserved, `u32` = 0         |
//! | 24     | …    | `rows * dim` `f32`, row-major |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::EmbeddingMatrix;

pub const MAGIC: [u8; 4] = *b"SVEM";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_embeddings(path: impl AsRef<Path>, matrix: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(matrix)).map_err(|e| Error::io(path, e))
}

pub fn encode(matrix: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.as_slice().len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(matrix.row_count() as u64).to_le_bytes());
    out.extend_from_slice(&(matrix.dim() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in matrix.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(Error::ShortHeader { actual: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let flags = u16::from_le_bytes(bytes[6..8].try_into().unwrap());
    if flags != 0 {
        return Err(Error::NonzeroReserved {
            field: "flags",
            value: u32::from(flags),
        });
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let reserved = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
    if reserved != 0 {
        return Err(Error::NonzeroReserved {
            field: "reserved",
            value: reserved,
        });
    }
    if dim == 0 {
        return Err(Error::ZeroDim);
    }
    let actual = (bytes.len() - HEADER_LEN) as u64;
    let expected = rows
        .checked_mul(u64::from(dim))
        .and_then(|n| n.checked_mul(4))
        .ok_or(Error::Truncated {
            expected: u64::MAX,
            actual,
        })?;
    if actual < expected {
        return Err(Error::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(Error::TrailingBytes {
            extra: actual - expected,
        });
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(dim as usize, data)
}
