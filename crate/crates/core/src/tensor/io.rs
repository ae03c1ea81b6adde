//! FATN binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FATN"            4 bytes magic
//! version   u8      currently 1
//! dtype     u8      0 = f32, 1 = f64
//! rank      u8
//! dims      u32 x rank
//! values    row-major, little-endian, dtype-sized
//! ```

use std::path::Path;

use super::{numel, DType, Element, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FATN";
pub const VERSION: u8 = 1;

pub fn encode<T: Element>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 4 * t.rank() + t.numel() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.tag());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Parsed header: dtype, shape and the byte length of the whole record.
pub(crate) fn header(bytes: &[u8], origin: &str) -> Result<(DType, Vec<usize>, usize)> {
    let bad = |m: &str| Error::format(origin, m);
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(bad("missing FATN magic"));
    }
    if bytes[4] != VERSION {
        return Err(bad(&format!("unsupported FATN version {}", bytes[4])));
    }
    let dtype = DType::from_tag(bytes[5]).ok_or_else(|| bad(&format!("unknown dtype tag {}", bytes[5])))?;
    let rank = bytes[6] as usize;
    let dims_end = 7 + 4 * rank;
    if bytes.len() < dims_end {
        return Err(bad("truncated dimensions"));
    }
    let shape: Vec<usize> = bytes[7..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let total = dims_end + numel(&shape) * dtype.size();
    if bytes.len() < total {
        return Err(bad("truncated values"));
    }
    Ok((dtype, shape, total))
}

/// Decodes one FATN record from the front of `bytes`, converting values to `T`
/// if the stored dtype differs. Returns the tensor and the bytes consumed.
pub fn decode_prefix<T: Element>(bytes: &[u8], origin: &str) -> Result<(Tensor<T>, usize)> {
    let (dtype, shape, total) = header(bytes, origin)?;
    let start = 7 + 4 * shape.len();
    let raw = &bytes[start..total];
    let data: Vec<T> = match dtype {
        DType::F32 => raw.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
        DType::F64 => raw.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
    };
    Ok((Tensor::new(&shape, data)?, total))
}

/// Decodes a buffer holding exactly one FATN record.
pub fn decode<T: Element>(bytes: &[u8], origin: &str) -> Result<Tensor<T>> {
    let (t, used) = decode_prefix(bytes, origin)?;
    if used != bytes.len() {
        return Err(Error::format(origin, "trailing bytes after tensor"));
    }
    Ok(t)
}

pub fn stored_dtype(bytes: &[u8], origin: &str) -> Result<DType> {
    header(bytes, origin).map(|(d, _, _)| d)
}

pub fn write_file<T: Element>(path: &Path, t: &Tensor<T>) -> Result<()> {
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read_file<T: Element>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}
