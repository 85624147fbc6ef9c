//! Content-addressed, reference-counted checkpoint store.
//!
//! Blobs are immutable once stored, so a copy is just another reference to the
//! same digest. "Mutating" a checkpoint means putting the new bytes and
//! releasing the old reference.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unknown checkpoint {0}")]
    UnknownRef(CheckpointRef),
    #[error("checkpoint file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("checkpoint file {0} does not match its digest")]
    Corrupt(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CheckpointRef(#[serde(with = "hex_digest")] [u8; 32]);

impl CheckpointRef {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for CheckpointRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for CheckpointRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CheckpointRef({})", &self.to_hex()[..12])
    }
}

mod hex_digest {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(&s).map_err(serde::de::Error::custom)?;
        v.try_into().map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))
    }
}

struct Entry {
    bytes: Arc<[u8]>,
    refs: usize,
}

#[derive(Default)]
pub struct CheckpointStore {
    entries: HashMap<CheckpointRef, Entry>,
}

impl CheckpointStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `blob` and returns a new reference to it.
    pub fn put(&mut self, blob: &[u8]) -> CheckpointRef {
        let r = CheckpointRef::of(blob);
        self.entries
            .entry(r)
            .and_modify(|e| e.refs += 1)
            .or_insert_with(|| Entry {
                bytes: Arc::from(blob),
                refs: 1,
            });
        r
    }

    pub fn get(&self, r: &CheckpointRef) -> Result<Arc<[u8]>, CheckpointError> {
        self.entries
            .get(r)
            .map(|e| Arc::clone(&e.bytes))
            .ok_or(CheckpointError::UnknownRef(*r))
    }

    /// Takes another reference to an existing blob without copying bytes.
    pub fn copy(&mut self, r: &CheckpointRef) -> Result<CheckpointRef, CheckpointError> {
        let e = self.entries.get_mut(r).ok_or(CheckpointError::UnknownRef(*r))?;
        e.refs += 1;
        Ok(*r)
    }

    /// Drops one reference; the blob is freed when none remain.
    pub fn release(&mut self, r: &CheckpointRef) -> Result<(), CheckpointError> {
        let e = self.entries.get_mut(r).ok_or(CheckpointError::UnknownRef(*r))?;
        e.refs -= 1;
        if e.refs == 0 {
            self.entries.remove(r);
        }
        Ok(())
    }

    pub fn ref_count(&self, r: &CheckpointRef) -> usize {
        self.entries.get(r).map_or(0, |e| e.refs)
    }

    /// Number of distinct blobs held.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_bytes(&self) -> usize {
        self.entries.values().map(|e| e.bytes.len()).sum()
    }

    /// Writes every blob to `dir/<hex digest>`, skipping files already present.
    pub fn spill_to(&self, dir: &Path) -> Result<usize, CheckpointError> {
        let io = |path: &Path, source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut written = 0;
        for (r, e) in &self.entries {
            let path = dir.join(r.to_hex());
            if !path.exists() {
                fs::write(&path, &e.bytes).map_err(|err| io(&path, err))?;
                written += 1;
            }
        }
        Ok(written)
    }

    /// Loads a blob previously spilled to `dir`, verifying its digest.
    pub fn load_from(&mut self, dir: &Path, r: &CheckpointRef) -> Result<CheckpointRef, CheckpointError> {
        let path = dir.join(r.to_hex());
        let bytes = fs::read(&path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if CheckpointRef::of(&bytes) != *r {
            return Err(CheckpointError::Corrupt(path.display().to_string()));
        }
        Ok(self.put(&bytes))
    }
}
