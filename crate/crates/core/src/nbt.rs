//! NBT binary tensor files.
//!
//! Layout (little-endian):
//! - magic `NBT1`
//! - rank: u32
//! - rank × extent: u32
//! - row-major f32 payload

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NBT1";

pub fn to_bytes(tensor: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * tensor.rank() + 4 * tensor.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode an NBT buffer. `origin` only labels errors.
pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Tensor<f32>> {
    let fail = |msg: String| Error::Format {
        path: origin.to_path_buf(),
        msg,
    };
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(fail("missing NBT1 magic".into()));
    }
    let read_u32 = |at: usize| -> Option<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };
    let rank = read_u32(4).unwrap() as usize;
    let header = 8 + 4 * rank;
    if bytes.len() < header {
        return Err(fail(format!("truncated header for rank {rank}")));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| read_u32(8 + 4 * i).unwrap() as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| fail(format!("extents {shape:?} overflow")))?;
    let payload = &bytes[header..];
    if payload.len() != count * 4 {
        return Err(fail(format!(
            "payload has {} bytes, shape {:?} needs {}",
            payload.len(),
            shape,
            count * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn write(path: impl AsRef<Path>, tensor: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(tensor)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
