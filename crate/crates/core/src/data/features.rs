//! Per-video feature file.
//!
//! ```text
//! magic   "AVMF"
//! version u32 LE = 1
//! T       u32 LE
//! D       u32 LE
//! T*D     f32 LE, row-major
//! ```

use std::fs;
use std::path::Path;

use super::{io_err, DataError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AVMF";
pub const VERSION: u32 = 1;

pub fn encode_features(features: &Tensor) -> Vec<u8> {
    assert_eq!(features.rank(), 2, "features are [T, D]");
    let (t, d) = (features.shape()[0], features.shape()[1]);
    let mut buf = Vec::with_capacity(16 + t * d * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for v in features.data().iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    buf
}

pub fn write_feature_file(path: &Path, features: &Tensor) -> Result<()> {
    fs::write(path, encode_features(features)).map_err(io_err(path))
}

pub fn decode_features(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    let fmt = |field: &'static str, message: String| DataError::Format {
        path: path.to_path_buf(),
        field,
        message,
    };
    let word = |i: usize, field: &'static str| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| fmt(field, "truncated header".into()))
    };
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(fmt("magic", "bad magic".into()));
    }
    let version = word(4, "version")?;
    if version != VERSION {
        return Err(fmt("version", format!("unsupported version {version}")));
    }
    let t = word(8, "T")? as usize;
    let d = word(12, "D")? as usize;
    if t == 0 {
        return Err(fmt("T", "zero segments".into()));
    }
    if d == 0 {
        return Err(fmt("D", "zero feature width".into()));
    }
    let payload = &bytes[16..];
    if payload.len() != t * d * 4 {
        return Err(fmt(
            "payload",
            format!("expected {} bytes for {t}x{d} values, found {}", t * d * 4, payload.len()),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    Ok(Tensor::from_vec(values, &[t, d])?)
}

pub fn read_feature_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_features(path, &bytes)
}
