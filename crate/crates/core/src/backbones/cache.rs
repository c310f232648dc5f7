//! On-disk tensor cache.
//!
//! Layout: `<root>/<image_id>/manifest.json` plus one `<key>.bin` per tensor
//! holding float32 values, row-major, little-endian. The manifest records
//! dtype, shape and a SHA-256 of the payload for every entry, and also stores
//! short text values (captions). Writes are serialized per image id and the
//! manifest is replaced by atomic rename.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DTYPE_F32: &str = "float32";
pub const LAYOUT: &str = "row-major-le";

/// Dense float32 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Decodes a payload, checking its length against `shape`.
    pub fn from_le_bytes(key: &str, shape: Vec<usize>, bytes: &[u8]) -> Result<Self> {
        let expected = shape.iter().product::<usize>() * 4;
        if bytes.len() != expected {
            return Err(Error::CorruptEntry {
                key: key.to_string(),
                reason: format!(
                    "shape {shape:?} needs {expected} payload bytes, found {}",
                    bytes.len()
                ),
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Tensor { shape, data })
    }
}

/// Provenance of a cached backbone map.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapMeta {
    pub kind: crate::backbones::MapKind,
    pub resolution: usize,
    pub timestep: u32,
    pub block: String,
    pub order: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub layout: String,
    pub file: String,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapMeta>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub image_id: String,
    #[serde(default)]
    pub entries: BTreeMap<String, ManifestEntry>,
    #[serde(default)]
    pub texts: BTreeMap<String, String>,
}

/// Keys and image ids are restricted to `[A-Za-z0-9._-]`, not starting with a dot.
pub fn validate_key(key: &str) -> Result<()> {
    let ok = !key.is_empty()
        && !key.starts_with('.')
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidKey(key.to_string()))
    }
}

#[derive(Debug)]
pub struct TensorCache {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl TensorCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        TensorCache {
            root: root.into(),
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, image_id: &str) -> PathBuf {
        self.root.join(image_id)
    }

    fn lock_for(&self, image_id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|p| p.into_inner());
        locks.entry(image_id.to_string()).or_default().clone()
    }

    pub fn manifest(&self, image_id: &str) -> Result<Option<Manifest>> {
        validate_key(image_id)?;
        let path = self.dir(image_id).join(MANIFEST_FILE);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes).map_err(|e| {
                Error::CorruptEntry {
                    key: format!("{image_id}/{MANIFEST_FILE}"),
                    reason: e.to_string(),
                }
            })?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    fn write_manifest(&self, manifest: &Manifest) -> Result<()> {
        let dir = self.dir(&manifest.image_id);
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        let bytes = serde_json::to_vec_pretty(manifest)?;
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        let dst = dir.join(MANIFEST_FILE);
        fs::rename(&tmp, &dst).map_err(|e| Error::io(dst, e))
    }

    fn update_manifest(&self, image_id: &str, f: impl FnOnce(&mut Manifest)) -> Result<()> {
        let mut manifest = match self.manifest(image_id) {
            Ok(Some(m)) => m,
            Ok(None) => Manifest {
                image_id: image_id.to_string(),
                ..Manifest::default()
            },
            // an unreadable manifest is replaced rather than propagated
            Err(Error::CorruptEntry { .. }) => Manifest {
                image_id: image_id.to_string(),
                ..Manifest::default()
            },
            Err(e) => return Err(e),
        };
        f(&mut manifest);
        self.write_manifest(&manifest)
    }

    pub fn put(&self, image_id: &str, key: &str, tensor: &Tensor) -> Result<()> {
        self.put_map(image_id, key, tensor, None)
    }

    pub fn put_map(
        &self,
        image_id: &str,
        key: &str,
        tensor: &Tensor,
        map: Option<MapMeta>,
    ) -> Result<()> {
        validate_key(image_id)?;
        validate_key(key)?;
        let lock = self.lock_for(image_id);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let dir = self.dir(image_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let bytes = tensor.to_le_bytes();
        let file = format!("{key}.bin");
        let tmp = dir.join(format!(".{file}.tmp"));
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        let dst = dir.join(&file);
        fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))?;
        let entry = ManifestEntry {
            dtype: DTYPE_F32.into(),
            shape: tensor.shape.clone(),
            layout: LAYOUT.into(),
            file,
            sha256: sha256_hex(&bytes),
            map,
        };
        self.update_manifest(image_id, |m| {
            m.entries.insert(key.to_string(), entry);
        })
    }

    /// Returns `Ok(None)` on a miss; `CorruptEntry` when the payload does not
    /// match the manifest.
    pub fn get(&self, image_id: &str, key: &str) -> Result<Option<Tensor>> {
        validate_key(key)?;
        let Some(manifest) = self.manifest(image_id)? else {
            return Ok(None);
        };
        let Some(entry) = manifest.entries.get(key) else {
            return Ok(None);
        };
        self.read_entry(image_id, key, entry).map(Some)
    }

    pub(crate) fn read_entry(
        &self,
        image_id: &str,
        key: &str,
        entry: &ManifestEntry,
    ) -> Result<Tensor> {
        let corrupt = |reason: String| Error::CorruptEntry {
            key: format!("{image_id}/{key}"),
            reason,
        };
        if entry.dtype != DTYPE_F32 {
            return Err(corrupt(format!("unsupported dtype {}", entry.dtype)));
        }
        let path = self.dir(image_id).join(&entry.file);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(corrupt("payload file missing".into()))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        let tensor = Tensor::from_le_bytes(&format!("{image_id}/{key}"), entry.shape.clone(), &bytes)?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(corrupt("payload checksum mismatch".into()));
        }
        Ok(tensor)
    }

    pub fn put_text(&self, image_id: &str, key: &str, text: &str) -> Result<()> {
        validate_key(image_id)?;
        validate_key(key)?;
        let lock = self.lock_for(image_id);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let dir = self.dir(image_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.update_manifest(image_id, |m| {
            m.texts.insert(key.to_string(), text.to_string());
        })
    }

    pub fn get_text(&self, image_id: &str, key: &str) -> Result<Option<String>> {
        Ok(self
            .manifest(image_id)?
            .and_then(|m| m.texts.get(key).cloned()))
    }
}
