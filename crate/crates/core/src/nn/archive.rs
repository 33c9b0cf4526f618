//! Flat binary tensor checkpoints.
//!
//! `<stem>.bin` is the concatenation of every tensor as little-endian f64;
//! `<stem>.json` lists each tensor's name, shape, element offset and length,
//! plus free-form metadata (architecture, optimizer state, ...).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARCHIVE_FORMAT: &str = "f64-le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements from the start of the blob.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArchiveManifest {
    format: String,
    tensors: Vec<TensorEntry>,
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    entries: Vec<TensorEntry>,
    blob: Vec<f64>,
    pub meta: serde_json::Value,
}

impl TensorArchive {
    pub fn new(meta: serde_json::Value) -> Self {
        TensorArchive {
            entries: Vec::new(),
            blob: Vec::new(),
            meta,
        }
    }

    pub fn push(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) {
        let entry = TensorEntry {
            name: name.to_string(),
            shape,
            offset: self.blob.len(),
            len: values.len(),
        };
        self.blob.extend(values);
        self.entries.push(entry);
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| (e.shape.as_slice(), &self.blob[e.offset..e.offset + e.len]))
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
        (dir.join(format!("{stem}.bin")), dir.join(format!("{stem}.json")))
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (bin, json) = Self::paths(dir, stem);
        let bytes: Vec<u8> = self.blob.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let manifest = ArchiveManifest {
            format: ARCHIVE_FORMAT.to_string(),
            tensors: self.entries.clone(),
            meta: self.meta.clone(),
        };
        let mut text =
            serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&json, e))?;
        text.push('\n');
        fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        Ok((bin, json))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let (bin, json) = Self::paths(dir, stem);
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let manifest: ArchiveManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(&json, e))?;
        if manifest.format != ARCHIVE_FORMAT {
            return Err(Error::Config(format!(
                "{}: unsupported tensor format {:?}",
                json.display(),
                manifest.format
            )));
        }
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Config(format!("{}: truncated tensor blob", bin.display())));
        }
        let blob: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        for e in &manifest.tensors {
            if e.offset + e.len > blob.len() || e.len != e.shape.iter().product::<usize>() {
                return Err(Error::Config(format!(
                    "{}: tensor {} does not fit the blob",
                    json.display(),
                    e.name
                )));
            }
        }
        Ok(TensorArchive {
            entries: manifest.tensors,
            blob,
            meta: manifest.meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load() {
        let dir = tempfile::TempDir::new().unwrap();
        let mut a = TensorArchive::new(serde_json::json!({"kind": "test"}));
        a.push("w", vec![2, 2], vec![1.0, -2.5, f64::MIN_POSITIVE, 3.0]);
        a.push("b", vec![1], vec![0.125]);
        a.save(dir.path(), "net").unwrap();
        let back = TensorArchive::load(dir.path(), "net").unwrap();
        assert_eq!(back, a);
        assert_eq!(back.get("b").unwrap().1, &[0.125]);
        assert!(back.get("missing").is_none());

        fs::write(dir.path().join("net.bin"), [0u8; 12]).unwrap();
        assert!(TensorArchive::load(dir.path(), "net").is_err());
    }
}
