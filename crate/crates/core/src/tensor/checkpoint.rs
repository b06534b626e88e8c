//! Checkpoint file: `MUGC`, version, then `(name, rank, dims, f64 payload)` records.
//!
//! ```text
//! magic    4 bytes  "MUGC"
//! version  u32 LE   1
//! count    u32 LE
//! repeated count times:
//!   name_len u32 LE, name UTF-8 bytes,
//!   rank u32 LE, dims rank x u32 LE,
//!   payload product(dims) x f64 LE
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::params::ParamStore;

pub const MAGIC: &[u8; 4] = b"MUGC";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn encode(entries: &[CheckpointEntry]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        buf.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(e.name.as_bytes());
        buf.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for d in &e.shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &e.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Format(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<CheckpointEntry>, CheckpointError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Format(format!("unsupported version {version}")));
    }
    let count = c.u32("count")?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| CheckpointError::Format("name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| c.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let values = c
            .take(n * 8, "payload")?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.push(CheckpointEntry { name, shape, values });
    }
    if c.pos != bytes.len() {
        return Err(CheckpointError::Format("trailing bytes after last record".into()));
    }
    Ok(entries)
}

pub fn entries_of(store: &ParamStore) -> Vec<CheckpointEntry> {
    store
        .named()
        .iter()
        .map(|(n, t)| CheckpointEntry {
            name: n.clone(),
            shape: t.shape().to_vec(),
            values: t.to_vec(),
        })
        .collect()
}

pub fn save(path: &Path, store: &ParamStore) -> Result<(), CheckpointError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(&entries_of(store)))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<CheckpointEntry>, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Loads values into an existing store. Names, order and shapes must match.
pub fn load_into(path: &Path, store: &ParamStore) -> Result<(), CheckpointError> {
    let entries = read(path)?;
    if entries.len() != store.len() {
        return Err(CheckpointError::Mismatch(format!(
            "checkpoint has {} tensors, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for (e, (name, t)) in entries.iter().zip(store.named()) {
        if &e.name != name || e.shape != t.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "expected {name} {:?}, found {} {:?}",
                t.shape(),
                e.name,
                e.shape
            )));
        }
        t.set_data(&e.values).map_err(|err| CheckpointError::Mismatch(err.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::params::ParamInit;

    #[test]
    fn layout_is_bit_exact() {
        let e = CheckpointEntry {
            name: "w".into(),
            shape: vec![2],
            values: vec![1.0, -0.5],
        };
        let bytes = encode(std::slice::from_ref(&e));
        let mut want = b"MUGC".to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.push(b'w');
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1.0f64.to_le_bytes());
        want.extend_from_slice(&(-0.5f64).to_le_bytes());
        assert_eq!(bytes, want);
        assert_eq!(decode(&bytes).unwrap(), vec![e]);
    }

    #[test]
    fn store_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut s = ParamStore::new(3);
        s.param("a", &[2, 3], ParamInit::Normal(1.0)).unwrap();
        s.param("b", &[4], ParamInit::Normal(1.0)).unwrap();
        save(&path, &s).unwrap();

        let mut fresh = ParamStore::new(99);
        fresh.param("a", &[2, 3], ParamInit::Zeros).unwrap();
        fresh.param("b", &[4], ParamInit::Zeros).unwrap();
        load_into(&path, &fresh).unwrap();
        let bits = |s: &ParamStore| s.snapshot().concat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&s), bits(&fresh));

        let mut wrong = ParamStore::new(0);
        wrong.param("a", &[3, 2], ParamInit::Zeros).unwrap();
        wrong.param("b", &[4], ParamInit::Zeros).unwrap();
        assert!(matches!(load_into(&path, &wrong), Err(CheckpointError::Mismatch(_))));
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(decode(b"XXXX\x01\0\0\0\0\0\0\0"), Err(CheckpointError::Format(m)) if m == "bad magic"));
        let mut bytes = encode(&[CheckpointEntry {
            name: "x".into(),
            shape: vec![3],
            values: vec![1.0, 2.0, 3.0],
        }]);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(decode(&bytes), Err(CheckpointError::Format(_))));
    }
}
