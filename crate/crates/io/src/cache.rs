//! Gram-vector store: `<root>/<backbone>/<layer>/vectors.npy` plus
//! `manifest.json` naming each row's image, preprocessing hash and SHA-256.
//!
//! A row digest is the SHA-256 of the row's little-endian `f64` bytes. The
//! same layout serves as the interchange format for externally dumped
//! vectors.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use gmmd_core::gram::GramVector;
use gmmd_core::seed::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::error::{read, read_string, write_atomic, IoError, Result};
use crate::npy::{decode_rows, encode_rows};

pub const CACHE_ENV: &str = "GMMD_CACHE_DIR";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VECTORS_FILE: &str = "vectors.npy";
const FORMAT: &str = "gmmd-gram-vectors";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub preprocessing_hash: String,
    pub row: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub format_version: u32,
    pub backbone_id: String,
    pub layer_index: usize,
    /// Channel count `d`; rows have `d(d+1)/2` entries.
    pub source_dim: usize,
    pub entries: Vec<ManifestEntry>,
}

pub fn row_digest(row: &[f64]) -> String {
    let bytes: Vec<u8> = row.iter().flat_map(|v| v.to_le_bytes()).collect();
    sha256_hex(&bytes)
}

/// A manifest and its rows, checked against each other.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    pub manifest: Manifest,
    pub rows: Vec<Vec<f64>>,
}

impl VectorSet {
    pub fn new(backbone_id: &str, layer_index: usize, source_dim: usize) -> Self {
        Self {
            manifest: Manifest {
                format: FORMAT.to_string(),
                format_version: FORMAT_VERSION,
                backbone_id: backbone_id.to_string(),
                layer_index,
                source_dim,
                entries: Vec::new(),
            },
            rows: Vec::new(),
        }
    }

    /// Reads `dir/manifest.json` and `dir/vectors.npy`; `None` when the
    /// manifest does not exist.
    pub fn read(dir: &Path) -> Result<Option<Self>> {
        let mpath = dir.join(MANIFEST_FILE);
        if !mpath.exists() {
            return Ok(None);
        }
        let manifest: Manifest =
            serde_json::from_str(&read_string(&mpath)?).map_err(|e| IoError::format(&mpath, e))?;
        if manifest.format != FORMAT || manifest.format_version != FORMAT_VERSION {
            return Err(IoError::format(
                &mpath,
                format!(
                    "unsupported format {} v{} (expected {FORMAT} v{FORMAT_VERSION})",
                    manifest.format, manifest.format_version
                ),
            ));
        }
        let vpath = dir.join(VECTORS_FILE);
        let rows = decode_rows(&read(&vpath)?, &vpath)?;
        let set = Self { manifest, rows };
        set.check_shape(dir)?;
        Ok(Some(set))
    }

    fn check_shape(&self, dir: &Path) -> Result<()> {
        let want = gmmd_core::gram::packed_len(self.manifest.source_dim);
        let corrupt = |message: String| IoError::Corruption {
            path: dir.to_path_buf(),
            message,
        };
        if let Some(r) = self.rows.iter().find(|r| r.len() != want) {
            return Err(corrupt(format!("row length {} but source_dim implies {want}", r.len())));
        }
        if self.manifest.entries.len() != self.rows.len() {
            return Err(corrupt(format!(
                "manifest lists {} entries for {} rows",
                self.manifest.entries.len(),
                self.rows.len()
            )));
        }
        for (i, e) in self.manifest.entries.iter().enumerate() {
            if e.row != i {
                return Err(corrupt(format!("entry {} points at row {}", e.image_id, e.row)));
            }
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(VECTORS_FILE), &encode_rows(&self.rows, gmmd_core::gram::packed_len(self.manifest.source_dim)))?;
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())
    }

    fn position(&self, image_id: &str, preprocessing_hash: &str) -> Option<usize> {
        self.manifest
            .entries
            .iter()
            .position(|e| e.image_id == image_id && e.preprocessing_hash == preprocessing_hash)
    }

    /// Verified row for `(image_id, preprocessing_hash)`.
    pub fn get(&self, dir: &Path, image_id: &str, preprocessing_hash: &str) -> Result<Option<GramVector>> {
        let Some(i) = self.position(image_id, preprocessing_hash) else {
            return Ok(None);
        };
        let row = &self.rows[i];
        if row_digest(row) != self.manifest.entries[i].sha256 {
            return Err(IoError::Corruption {
                path: dir.to_path_buf(),
                message: format!("digest mismatch for image {image_id}"),
            });
        }
        Ok(Some(GramVector::new(self.manifest.source_dim, row.clone())?))
    }

    /// Inserts or replaces a row.
    pub fn put(&mut self, image_id: &str, preprocessing_hash: &str, v: &GramVector) -> Result<()> {
        if v.source_dim() != self.manifest.source_dim {
            return Err(gmmd_core::Error::DimensionMismatch {
                expected: self.manifest.source_dim,
                found: v.source_dim(),
            }
            .into());
        }
        let sha256 = row_digest(v.values());
        match self.position(image_id, preprocessing_hash) {
            Some(i) => {
                self.rows[i] = v.values().to_vec();
                self.manifest.entries[i].sha256 = sha256;
            }
            None => {
                self.manifest.entries.push(ManifestEntry {
                    image_id: image_id.to_string(),
                    preprocessing_hash: preprocessing_hash.to_string(),
                    row: self.rows.len(),
                    sha256,
                });
                self.rows.push(v.values().to_vec());
            }
        }
        Ok(())
    }

    /// Every row in manifest order, verified.
    pub fn all(&self, dir: &Path) -> Result<Vec<(String, GramVector)>> {
        self.manifest
            .entries
            .iter()
            .map(|e| {
                let v = self
                    .get(dir, &e.image_id, &e.preprocessing_hash)?
                    .expect("entry exists");
                Ok((e.image_id.clone(), v))
            })
            .collect()
    }
}

/// Reads a dumped or cached vector directory as `(image id, vector)` pairs.
pub fn read_vector_dir(dir: &Path) -> Result<Vec<(String, GramVector)>> {
    match VectorSet::read(dir)? {
        Some(set) => set.all(dir),
        None => Err(IoError::File {
            path: dir.join(MANIFEST_FILE),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no vector manifest"),
        }),
    }
}

/// Writes `(id, vector)` pairs as a standalone vector directory.
pub fn write_vector_dir(
    dir: &Path,
    backbone_id: &str,
    layer_index: usize,
    preprocessing_hash: &str,
    vectors: &[(String, GramVector)],
) -> Result<()> {
    let source_dim = vectors
        .first()
        .map(|(_, v)| v.source_dim())
        .ok_or_else(|| IoError::format(dir, "no vectors to write"))?;
    let mut set = VectorSet::new(backbone_id, layer_index, source_dim);
    for (id, v) in vectors {
        set.put(id, preprocessing_hash, v)?;
    }
    set.write(dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheKey<'a> {
    pub backbone_id: &'a str,
    pub layer_index: usize,
    pub image_id: &'a str,
    pub preprocessing_hash: &'a str,
}

/// Directory-backed store shared by the pipeline stages. One writer at a
/// time within a process; writes are atomic renames, so concurrent readers
/// see either the old or the new state.
#[derive(Debug)]
pub struct GramCache {
    root: PathBuf,
    write_lock: Mutex<()>,
}

fn check_component(s: &str) -> Result<()> {
    let ok = !s.is_empty()
        && s != "."
        && s != ".."
        && s.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c));
    if ok {
        Ok(())
    } else {
        Err(gmmd_core::Error::InvalidInput(format!("backbone id {s:?} is not a safe directory name")).into())
    }
}

impl GramCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            write_lock: Mutex::new(()),
        }
    }

    /// Root from `GMMD_CACHE_DIR`, else `fallback`.
    pub fn from_env(fallback: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) if !dir.is_empty() => Self::new(PathBuf::from(dir)),
            _ => Self::new(fallback),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn layer_dir(&self, backbone_id: &str, layer_index: usize) -> Result<PathBuf> {
        check_component(backbone_id)?;
        Ok(self.root.join(backbone_id).join(layer_index.to_string()))
    }

    /// `Ok(None)` is the not-found signal.
    pub fn get(&self, key: CacheKey<'_>) -> Result<Option<GramVector>> {
        let dir = self.layer_dir(key.backbone_id, key.layer_index)?;
        match VectorSet::read(&dir)? {
            None => Ok(None),
            Some(set) => set.get(&dir, key.image_id, key.preprocessing_hash),
        }
    }

    /// Looks up many images of one layer with a single read.
    pub fn get_many(
        &self,
        backbone_id: &str,
        layer_index: usize,
        preprocessing_hash: &str,
        image_ids: &[&str],
    ) -> Result<Vec<Option<GramVector>>> {
        let dir = self.layer_dir(backbone_id, layer_index)?;
        let Some(set) = VectorSet::read(&dir)? else {
            return Ok(vec![None; image_ids.len()]);
        };
        image_ids
            .iter()
            .map(|id| set.get(&dir, id, preprocessing_hash))
            .collect()
    }

    pub fn put(&self, key: CacheKey<'_>, v: &GramVector) -> Result<()> {
        self.put_many(
            key.backbone_id,
            key.layer_index,
            key.preprocessing_hash,
            &[(key.image_id.to_string(), v.clone())],
        )
    }

    pub fn put_many(
        &self,
        backbone_id: &str,
        layer_index: usize,
        preprocessing_hash: &str,
        vectors: &[(String, GramVector)],
    ) -> Result<()> {
        let Some((_, first)) = vectors.first() else {
            return Ok(());
        };
        let dir = self.layer_dir(backbone_id, layer_index)?;
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut set = match VectorSet::read(&dir)? {
            Some(s) => s,
            None => VectorSet::new(backbone_id, layer_index, first.source_dim()),
        };
        for (id, v) in vectors {
            set.put(id, preprocessing_hash, v)?;
        }
        set.write(&dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gv(seed: f64) -> GramVector {
        GramVector::new(2, vec![seed, seed * 0.5, seed.sqrt()]).unwrap()
    }

    fn key<'a>(id: &'a str) -> CacheKey<'a> {
        CacheKey {
            backbone_id: "toy",
            layer_index: 3,
            image_id: id,
            preprocessing_hash: "h1",
        }
    }

    #[test]
    fn put_then_get_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cache = GramCache::new(dir.path());
        let v = gv(0.1 + 0.2);
        cache.put(key("a"), &v).unwrap();
        cache.put(key("b"), &gv(2.0)).unwrap();
        assert_eq!(cache.get(key("a")).unwrap().unwrap(), v);
        assert!(dir.path().join("toy/3/vectors.npy").exists());
        assert!(dir.path().join("toy/3/manifest.json").exists());
    }

    #[test]
    fn missing_key_is_none() {
        let dir = tempfile::tempdir().unwrap();
        let cache = GramCache::new(dir.path());
        assert!(cache.get(key("a")).unwrap().is_none());
        cache.put(key("a"), &gv(1.0)).unwrap();
        assert!(cache.get(key("zzz")).unwrap().is_none());
        let other_hash = CacheKey {
            preprocessing_hash: "h2",
            ..key("a")
        };
        assert!(cache.get(other_hash).unwrap().is_none());
    }

    #[test]
    fn replaced_rows_keep_one_entry() {
        let dir = tempfile::tempdir().unwrap();
        let cache = GramCache::new(dir.path());
        cache.put(key("a"), &gv(1.0)).unwrap();
        cache.put(key("a"), &gv(4.0)).unwrap();
        assert_eq!(cache.get(key("a")).unwrap().unwrap(), gv(4.0));
        let set = VectorSet::read(&cache.layer_dir("toy", 3).unwrap()).unwrap().unwrap();
        assert_eq!(set.rows.len(), 1);
    }

    #[test]
    fn tampered_rows_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cache = GramCache::new(dir.path());
        cache.put(key("a"), &gv(1.0)).unwrap();
        let ldir = cache.layer_dir("toy", 3).unwrap();
        let mut set = VectorSet::read(&ldir).unwrap().unwrap();
        set.rows[0][1] += 1e-12;
        std::fs::write(ldir.join(VECTORS_FILE), encode_rows(&set.rows, 3)).unwrap();
        assert!(matches!(cache.get(key("a")), Err(IoError::Corruption { .. })));
    }

    #[test]
    fn unsafe_backbone_ids_are_rejected() {
        let cache = GramCache::new("/tmp/unused");
        assert!(cache.layer_dir("../up", 1).is_err());
        assert!(cache.layer_dir("a/b", 1).is_err());
        assert!(cache.layer_dir("dinov2-vitb14", 1).is_ok());
    }

    #[test]
    fn vector_dirs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vs = vec![("x".to_string(), gv(1.0)), ("y".to_string(), gv(9.0))];
        write_vector_dir(dir.path(), "toy", 1, "h", &vs).unwrap();
        assert_eq!(read_vector_dir(dir.path()).unwrap(), vs);
        assert!(read_vector_dir(&dir.path().join("nope")).unwrap_err().is_input_error());
    }
}
