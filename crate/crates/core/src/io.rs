//! On-disk artifacts: a `manifest.json` next to raw little-endian `f64` blobs.
//!
//! Matrices are written row-major unless a manifest says otherwise. Decoders
//! validate lengths and finiteness so corrupted files surface as
//! [`SurrogateError::Format`] instead of panics.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Result, SurrogateError};

pub const MANIFEST: &str = "manifest.json";

/// Serializes values as consecutive little-endian `f64`.
pub fn encode_f64_le(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_f64_le`]. Rejects ragged input and, when `expected` is
/// given, a wrong element count.
pub fn decode_f64_le(bytes: &[u8], expected: Option<usize>) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(SurrogateError::Format(format!("blob length {} is not a multiple of 8", bytes.len())));
    }
    let n = bytes.len() / 8;
    if let Some(e) = expected {
        if e != n {
            return Err(SurrogateError::Format(format!("blob holds {n} values, manifest says {e}")));
        }
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

/// Blobs stored back to back in one buffer, read in the order a decoder asks
/// for them. Drives the `*_from_parts` decoders without touching the disk.
pub struct PackedBlobs<'a> {
    rest: &'a [u8],
}

impl<'a> PackedBlobs<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { rest: bytes }
    }

    /// Splits `manifest JSON, NUL, blob bytes`; without a NUL everything is manifest.
    pub fn split(bytes: &'a [u8]) -> (&'a [u8], Self) {
        match bytes.iter().position(|&b| b == 0) {
            Some(i) => (&bytes[..i], Self::new(&bytes[i + 1..])),
            None => (bytes, Self::new(&[])),
        }
    }

    pub fn read(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        let need = len
            .checked_mul(8)
            .filter(|&n| n <= self.rest.len())
            .ok_or_else(|| SurrogateError::Format(format!("blob {name} truncated")))?;
        let (head, tail) = self.rest.split_at(need);
        self.rest = tail;
        decode_f64_le(head, Some(len))
    }

    pub fn is_empty(&self) -> bool {
        self.rest.is_empty()
    }
}

/// Row-major flattening.
pub fn matrix_to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn matrix_from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<DMatrix<f64>> {
    let len = rows.checked_mul(cols).ok_or_else(|| SurrogateError::Format("matrix shape overflows".into()))?;
    if data.len() != len {
        return Err(SurrogateError::Format(format!("{} values for a {rows}x{cols} matrix", data.len())));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of a set of `f64` arrays, order-sensitive.
pub fn hash_arrays<'a>(arrays: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut h = Sha256::new();
    for a in arrays {
        h.update((a.len() as u64).to_le_bytes());
        for v in a {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// A directory holding one manifest and any number of named blobs.
#[derive(Clone, Debug)]
pub struct BlobStore {
    root: PathBuf,
}

impl BlobStore {
    /// Opens `root`, creating it if needed.
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(root.as_ref())?;
        Ok(Self { root: root.as_ref().to_path_buf() })
    }

    /// Opens an existing directory.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(SurrogateError::Format(format!("{} is not an artifact directory", root.display())));
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn blob_path(&self, name: &str) -> Result<PathBuf> {
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(SurrogateError::Format(format!("bad blob name {name:?}")));
        }
        Ok(self.root.join(name))
    }

    pub fn write_manifest<T: Serialize>(&self, manifest: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(manifest)?;
        fs::write(self.root.join(MANIFEST), text + "\n")?;
        Ok(())
    }

    pub fn read_manifest<T: DeserializeOwned>(&self) -> Result<T> {
        let bytes = fs::read(self.root.join(MANIFEST))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn write_blob(&self, name: &str, values: &[f64]) -> Result<()> {
        fs::write(self.blob_path(name)?, encode_f64_le(values))?;
        Ok(())
    }

    pub fn read_blob(&self, name: &str, expected: usize) -> Result<Vec<f64>> {
        decode_f64_le(&fs::read(self.blob_path(name)?)?, Some(expected))
    }

    pub fn write_matrix(&self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        self.write_blob(name, &matrix_to_row_major(m))
    }

    pub fn read_matrix(&self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let len = rows.checked_mul(cols).ok_or_else(|| SurrogateError::Format("matrix shape overflows".into()))?;
        matrix_from_row_major(rows, cols, &self.read_blob(name, len)?)
    }

    pub fn read_vector(&self, name: &str, len: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.read_blob(name, len)?))
    }

    /// Hash of the manifest and every regular file, in name order.
    pub fn content_hash(&self) -> Result<String> {
        let mut names: Vec<_> = fs::read_dir(&self.root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        let mut h = Sha256::new();
        for n in names {
            h.update(n.as_bytes());
            h.update([0u8]);
            h.update(fs::read(self.root.join(&n))?);
        }
        Ok(hex::encode(h.finalize()))
    }
}
