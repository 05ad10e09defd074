//! Versioned binary container of named parameter arrays.
//!
//! Layout (little-endian): magic `RSKC`, `u32` version, kind string, config
//! hash string, metadata string (JSON), `u64` array count, then per array the
//! name, `u64` rows, `u64` cols and the raw `f64` values; a SHA-256 of all
//! preceding bytes closes the file. Values are stored bit-exactly.

use std::path::Path;

use thiserror::Error;

use super::{ParamSet, Tensor};
use crate::codec::{sha256, ByteReader, ByteWriter, Truncated};

const MAGIC: &[u8; 4] = b"RSKC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint content hash mismatch")]
    HashMismatch,
    #[error("checkpoint has no array named `{0}`")]
    Missing(String),
    #[error("checkpoint kind is `{found}`, expected `{expected}`")]
    Kind { found: String, expected: String },
    #[error("checkpoint metadata: {0}")]
    Meta(String),
}

impl From<Truncated> for CheckpointError {
    fn from(_: Truncated) -> Self {
        CheckpointError::Truncated
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config_hash: String,
    pub meta: String,
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, config_hash: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            config_hash: config_hash.into(),
            meta: String::from("{}"),
            arrays: Vec::new(),
        }
    }

    pub fn put(&mut self, name: impl Into<String>, t: Tensor) {
        self.arrays.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    /// Stores every parameter under `prefix/`.
    pub fn put_params(&mut self, prefix: &str, params: &ParamSet) {
        for (name, t) in params.iter() {
            self.put(format!("{prefix}/{name}"), t.clone());
        }
    }

    /// Overwrites `params` with the arrays stored under `prefix/`; every
    /// parameter must be present with a matching shape.
    pub fn load_params(&self, prefix: &str, params: &mut ParamSet) -> Result<(), CheckpointError> {
        for i in 0..params.len() {
            let id = super::ParamId(i);
            let key = format!("{prefix}/{}", params.name(id));
            let stored = self.get(&key)?;
            if stored.shape() != params.get(id).shape() {
                return Err(CheckpointError::Meta(format!(
                    "`{key}` has shape {:?}, model expects {:?}",
                    stored.shape(),
                    params.get(id).shape()
                )));
            }
            *params.get_mut(id) = stored.clone();
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.kind != kind {
            return Err(CheckpointError::Kind {
                found: self.kind.clone(),
                expected: kind.to_string(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(&self.kind);
        w.str(&self.config_hash);
        w.str(&self.meta);
        w.u64(self.arrays.len() as u64);
        for (name, t) in &self.arrays {
            w.str(name);
            w.u64(t.rows() as u64);
            w.u64(t.cols() as u64);
            w.f64s(t.data());
        }
        crate::codec::seal(w)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = ByteReader::new(buf);
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let kind = r.str()?;
        let config_hash = r.str()?;
        let meta = r.str()?;
        let n = r.u64()? as usize;
        let mut arrays = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.str()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let len = rows.checked_mul(cols).ok_or(CheckpointError::Truncated)?;
            let data = r.f64s(len)?;
            arrays.push((name, Tensor::new(rows, cols, data).map_err(|_| CheckpointError::Truncated)?));
        }
        let body_len = r.position();
        let digest = r.take(32)?;
        if r.remaining() != 0 || sha256(&buf[..body_len]) != digest {
            return Err(CheckpointError::HashMismatch);
        }
        Ok(Self {
            kind,
            config_hash,
            meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 over the serialised bytes.
    pub fn content_hash(&self) -> String {
        crate::codec::sha256_hex(&self.to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new("test", "abc");
        c.meta = r#"{"k":1}"#.into();
        c.put("a", Tensor::row(&[1.0, f64::MIN_POSITIVE, -0.0, 1.0 / 3.0]));
        c.put("b", Tensor::zeros(2, 3));
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), c.to_bytes());
        assert_eq!(back.get("a").unwrap().data()[2].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn corruption_and_truncation_are_distinct() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        let idx = bad.len() - 40;
        bad[idx] ^= 0x01;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::HashMismatch)));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 50]),
            Err(CheckpointError::Truncated)
        ));
        let mut old = bytes.clone();
        old[4] = 0;
        assert!(matches!(
            Checkpoint::from_bytes(&old),
            Err(CheckpointError::Version { found: 0, .. })
        ));
    }
}
