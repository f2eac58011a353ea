//! Persistent storage of named weight collections.
//!
//! A checkpoint on disk is a pair of files sharing a stem: `<stem>.manifest.json`
//! describing shapes, byte offsets, and CRC-32 checksums, and `<stem>.bin`
//! holding the concatenated row-major little-endian `f64` payloads in
//! manifest order. Tensor iteration order is lexicographic everywhere, which
//! keeps model-level sums and reports deterministic.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const FORMAT_VERSION: u32 = 1;

/// Named collection of matrices with free-form string metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    tensors: BTreeMap<String, Matrix>,
    metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor under a unique nonempty name.
    pub fn insert(&mut self, name: impl Into<String>, matrix: Matrix) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::invalid("tensor name must be nonempty"));
        }
        if self.tensors.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate tensor name `{name}`")));
        }
        if !matrix.is_finite() {
            return Err(Error::invalid(format!(
                "tensor `{name}` has non-finite entries"
            )));
        }
        self.tensors.insert(name, matrix);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    /// Tensors in lexicographic name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<&str> {
        self.tensors.keys().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    /// Writes `<stem>.manifest.json` and `<stem>.bin`, replacing existing files.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut payload: Vec<u8> = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, matrix) in &self.tensors {
            let offset = payload.len() as u64;
            let start = payload.len();
            for value in matrix.data() {
                payload.extend_from_slice(&value.to_le_bytes());
            }
            entries.push(ManifestTensor {
                name: name.clone(),
                rows: matrix.rows(),
                cols: matrix.cols(),
                offset,
                crc32: crc32(&payload[start..]),
            });
        }
        let manifest = Manifest {
            version: FORMAT_VERSION,
            tensors: entries,
            metadata: self.metadata.clone(),
        };
        let mut manifest_json =
            serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        manifest_json.push('\n');

        write_atomic(&bin_path(stem), &payload)?;
        write_atomic(&manifest_path(stem), manifest_json.as_bytes())?;
        Ok(())
    }

    /// Loads and verifies a checkpoint saved by [`Checkpoint::save`].
    pub fn load(stem: &Path) -> Result<Checkpoint> {
        let man_path = manifest_path(stem);
        let manifest_bytes = std::fs::read(&man_path)
            .map_err(|e| Error::storage(man_path.display().to_string(), e))?;
        let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| Error::Corruption(format!("unreadable manifest: {e}")))?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(manifest.version));
        }

        let payload_path = bin_path(stem);
        let mut file = File::open(&payload_path)
            .map_err(|e| Error::storage(payload_path.display().to_string(), e))?;
        let file_len = file
            .metadata()
            .map_err(|e| Error::storage(payload_path.display().to_string(), e))?
            .len();

        // Validate all byte windows before reading anything.
        let mut windows: Vec<(u64, u64, &str)> = Vec::with_capacity(manifest.tensors.len());
        for entry in &manifest.tensors {
            if entry.name.is_empty() {
                return Err(Error::Corruption("manifest has empty tensor name".into()));
            }
            let cells = entry
                .rows
                .checked_mul(entry.cols)
                .ok_or_else(|| Error::Corruption(format!("tensor `{}`: shape overflow", entry.name)))?;
            if entry.rows == 0 || entry.cols == 0 {
                return Err(Error::Corruption(format!(
                    "tensor `{}`: zero dimension",
                    entry.name
                )));
            }
            let nbytes = (cells as u64).checked_mul(8).ok_or_else(|| {
                Error::Corruption(format!("tensor `{}`: size overflow", entry.name))
            })?;
            let end = entry.offset.checked_add(nbytes).ok_or_else(|| {
                Error::Corruption(format!("tensor `{}`: offset overflow", entry.name))
            })?;
            if end > file_len {
                return Err(Error::Corruption(format!(
                    "tensor `{}`: payload window {}..{} exceeds file length {}",
                    entry.name, entry.offset, end, file_len
                )));
            }
            windows.push((entry.offset, end, &entry.name));
        }
        windows.sort_unstable_by_key(|w| w.0);
        for pair in windows.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(Error::Corruption(format!(
                    "tensors `{}` and `{}` overlap in the payload",
                    pair[0].2, pair[1].2
                )));
            }
        }

        let mut checkpoint = Checkpoint::new();
        checkpoint.metadata = manifest.metadata.clone();
        for entry in &manifest.tensors {
            let nbytes = entry.rows * entry.cols * 8;
            let mut buf = vec![0u8; nbytes];
            file.seek(SeekFrom::Start(entry.offset))
                .map_err(|e| Error::storage(payload_path.display().to_string(), e))?;
            file.read_exact(&mut buf).map_err(|_| {
                Error::Corruption(format!("tensor `{}`: truncated payload", entry.name))
            })?;
            if crc32(&buf) != entry.crc32 {
                return Err(Error::Corruption(format!(
                    "tensor `{}`: checksum mismatch",
                    entry.name
                )));
            }
            let data: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let matrix = Matrix::new(entry.rows, entry.cols, data).map_err(|_| {
                Error::Corruption(format!("tensor `{}`: non-finite payload", entry.name))
            })?;
            checkpoint.insert(entry.name.clone(), matrix).map_err(|_| {
                Error::Corruption(format!("tensor `{}`: duplicate manifest entry", entry.name))
            })?;
        }
        Ok(checkpoint)
    }
}

/// On-disk manifest: shapes, offsets, and checksums of each tensor payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub tensors: Vec<ManifestTensor>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: u64,
    pub crc32: u32,
}

/// A base/tuned pair validated to share tensor names and shapes.
#[derive(Debug, Clone)]
pub struct CheckpointPair {
    base: Checkpoint,
    tuned: Checkpoint,
}

impl CheckpointPair {
    pub fn base(&self) -> &Checkpoint {
        &self.base
    }

    pub fn tuned(&self) -> &Checkpoint {
        &self.tuned
    }
}

/// Checks that `base` and `tuned` carry identical tensor names and shapes.
pub fn validate_pair(base: Checkpoint, tuned: Checkpoint) -> Result<CheckpointPair> {
    let missing_in_tuned: Vec<&str> = base
        .names()
        .into_iter()
        .filter(|n| tuned.get(n).is_none())
        .collect();
    let missing_in_base: Vec<&str> = tuned
        .names()
        .into_iter()
        .filter(|n| base.get(n).is_none())
        .collect();
    if !missing_in_tuned.is_empty() || !missing_in_base.is_empty() {
        let mut parts = Vec::new();
        if !missing_in_tuned.is_empty() {
            parts.push(format!("missing in tuned: {}", missing_in_tuned.join(", ")));
        }
        if !missing_in_base.is_empty() {
            parts.push(format!("missing in base: {}", missing_in_base.join(", ")));
        }
        return Err(Error::Mismatch(parts.join("; ")));
    }
    for (name, base_m) in base.iter() {
        let tuned_m = tuned.get(name).expect("name sets match");
        if (base_m.rows(), base_m.cols()) != (tuned_m.rows(), tuned_m.cols()) {
            return Err(Error::Mismatch(format!(
                "tensor `{name}`: base is {}x{}, tuned is {}x{}",
                base_m.rows(),
                base_m.cols(),
                tuned_m.rows(),
                tuned_m.cols()
            )));
        }
    }
    Ok(CheckpointPair { base, tuned })
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    append_extension(stem, "manifest.json")
}

pub fn bin_path(stem: &Path) -> PathBuf {
    append_extension(stem, "bin")
}

fn append_extension(stem: &Path, ext: &str) -> PathBuf {
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(ext);
    stem.with_file_name(name)
}

/// Write-temp-then-rename so readers never observe a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let io = |e| Error::storage(path.display().to_string(), e);
    let mut f = File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io)
}

/// CRC-32 (IEEE reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    const TABLE: [u32; 256] = crc32_table();
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = (crc >> 8) ^ TABLE[((crc ^ b as u32) & 0xFF) as usize];
    }
    !crc
}

const fn crc32_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ 0xEDB8_8320
            } else {
                crc >> 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc32_known_vector() {
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
    }

    #[test]
    fn insert_rejects_empty_and_duplicate_names() {
        let mut c = Checkpoint::new();
        assert!(c.insert("", Matrix::identity(2)).is_err());
        c.insert("w", Matrix::identity(2)).unwrap();
        assert!(c.insert("w", Matrix::identity(2)).is_err());
    }

    #[test]
    fn iteration_is_lexicographic() {
        let mut c = Checkpoint::new();
        c.insert("w2", Matrix::identity(2)).unwrap();
        c.insert("head", Matrix::identity(2)).unwrap();
        c.insert("w1", Matrix::identity(2)).unwrap();
        assert_eq!(c.names(), vec!["head", "w1", "w2"]);
    }

    #[test]
    fn pair_validation_reports_missing_and_mismatched() {
        let mut base = Checkpoint::new();
        base.insert("a", Matrix::identity(2)).unwrap();
        base.insert("b", Matrix::identity(2)).unwrap();

        let mut tuned = Checkpoint::new();
        tuned.insert("a", Matrix::identity(2)).unwrap();
        let err = validate_pair(base.clone(), tuned).unwrap_err();
        assert!(err.to_string().contains('b'), "{err}");

        let mut transposed = Checkpoint::new();
        transposed.insert("a", Matrix::identity(2)).unwrap();
        transposed
            .insert("b", Matrix::zeros(1, 4).map(|_| 0.0))
            .unwrap();
        let err = validate_pair(base.clone(), transposed).unwrap_err();
        assert!(err.to_string().contains("`b`"), "{err}");

        assert!(validate_pair(base.clone(), base).is_ok());
    }
}
