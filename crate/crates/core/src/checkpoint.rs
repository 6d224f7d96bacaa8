//! Checkpoint container: a JSON manifest (name -> shape, offset) followed by
//! a little-endian f32 payload. Writes are atomic (temp file then rename).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Scalar;

const MAGIC: &[u8; 8] = b"SGCKPT01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint file: {0}")]
    Format(String),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("missing entry: {0}")]
    Missing(String),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    entries: Vec<Entry>,
    meta: serde_json::Value,
}

/// In-memory checkpoint: named f32 arrays plus free-form metadata.
pub struct Checkpoint {
    pub meta: serde_json::Value,
    entries: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Checkpoint {
            meta,
            entries: Vec::new(),
        }
    }

    pub fn push<S: Scalar>(&mut self, name: &str, shape: &[usize], values: &[S]) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.entries.push((
            name.to_string(),
            shape.to_vec(),
            values.iter().map(|v| v.as_f32()).collect(),
        ));
    }

    pub fn get(&self, name: &str) -> Result<(&[usize], &[f32])> {
        self.entries
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, shape, vals)| (shape.as_slice(), vals.as_slice()))
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::with_capacity(self.entries.len());
        let mut offset = 0usize;
        for (name, shape, vals) in &self.entries {
            entries.push(Entry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
                len: vals.len(),
            });
            offset += vals.len() * 4;
        }
        let manifest = serde_json::to_vec(&Manifest {
            entries,
            meta: self.meta.clone(),
        })?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(MAGIC)?;
            f.write_all(&(manifest.len() as u64).to_le_bytes())?;
            f.write_all(&manifest)?;
            for (_, _, vals) in &self.entries {
                let mut bytes = Vec::with_capacity(vals.len() * 4);
                for v in vals {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                f.write_all(&bytes)?;
            }
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = fs::File::open(path)?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let mut len_bytes = [0u8; 8];
        f.read_exact(&mut len_bytes)?;
        let mlen = u64::from_le_bytes(len_bytes) as usize;
        let mut mbytes = vec![0u8; mlen];
        f.read_exact(&mut mbytes)?;
        let manifest: Manifest = serde_json::from_slice(&mbytes)?;
        let mut payload = Vec::new();
        f.read_to_end(&mut payload)?;
        let total: usize = manifest.entries.iter().map(|e| e.len).sum();
        if payload.len() != total * 4 {
            return Err(CheckpointError::Format(format!(
                "payload holds {} bytes, manifest wants {}",
                payload.len(),
                total * 4
            )));
        }
        let mut entries = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            if e.shape.iter().product::<usize>() != e.len {
                return Err(CheckpointError::Format(format!(
                    "entry {}: shape/len mismatch",
                    e.name
                )));
            }
            let start = e.offset;
            let vals: Vec<f32> = payload[start..start + e.len * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            entries.push((e.name.clone(), e.shape.clone(), vals));
        }
        Ok(Checkpoint {
            meta: manifest.meta,
            entries,
        })
    }
}
