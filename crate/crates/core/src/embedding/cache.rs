use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Embedding, EmbeddingError, Modality};

/// File magic preceding the `u32` dimension and little-endian `f32` payload.
pub const CACHE_MAGIC: &[u8; 8] = b"CRDGEMB1";

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

pub fn encode_embedding_file(vector: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * vector.len());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(vector.len() as u32).to_le_bytes());
    for v in vector {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses an embedding file; errors carry the reason for the caller to wrap.
pub fn decode_embedding_file(bytes: &[u8]) -> Result<Vec<f32>, String> {
    if bytes.len() < 12 || &bytes[..8] != CACHE_MAGIC {
        return Err("bad magic".into());
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    if payload.len() != dim * 4 {
        return Err(format!("payload is {} bytes, header says dim {dim}", payload.len()));
    }
    Ok(payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Directory of embedding files, one per key, named by the key's hex digest.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, EmbeddingError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> Result<PathBuf, EmbeddingError> {
        if key.is_empty() || !key.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(EmbeddingError::CacheCorrupt {
                key: key.to_string(),
                reason: "key is not a hex digest".into(),
            });
        }
        Ok(self.dir.join(key))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.path(key).is_ok_and(|p| p.is_file())
    }

    pub fn get(&self, key: &str, kind: Modality) -> Result<Option<Embedding>, EmbeddingError> {
        let path = self.path(key)?;
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let corrupt = |reason: String| EmbeddingError::CacheCorrupt {
            key: key.to_string(),
            reason,
        };
        let vector = decode_embedding_file(&bytes).map_err(corrupt)?;
        let emb = Embedding::from_vector(vector.clone(), kind).map_err(|e| corrupt(e.to_string()))?;
        // Stored vectors are already unit norm; anything else was tampered with.
        if (emb.norm() - 1.0).abs() > 1e-5 || vector.iter().zip(emb.vector()).any(|(a, b)| (a - b).abs() > 1e-5) {
            return Err(corrupt("stored vector is not unit norm".into()));
        }
        Ok(Some(Embedding { vector, kind }))
    }

    /// Writes through a temporary file and rename; concurrent writers of the
    /// same key race harmlessly because values are deterministic.
    pub fn put(&self, key: &str, emb: &Embedding) -> Result<(), EmbeddingError> {
        let path = self.path(key)?;
        let tmp = self.dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, encode_embedding_file(emb.vector()))?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

/// Returns the cached embedding for `key`, or computes, stores and returns it.
/// A corrupt entry is recomputed and overwritten.
pub fn cache_get_or_compute(
    cache: &EmbeddingCache,
    key: &str,
    kind: Modality,
    compute: impl FnOnce() -> Result<Embedding, EmbeddingError>,
) -> Result<Embedding, EmbeddingError> {
    match cache.get(key, kind) {
        Ok(Some(e)) => return Ok(e),
        Ok(None) => {}
        Err(EmbeddingError::CacheCorrupt { key, reason }) => {
            log::warn!("recomputing corrupt cache entry {key}: {reason}");
        }
        Err(e) => return Err(e),
    }
    let emb = compute()?;
    cache.put(key, &emb)?;
    Ok(emb)
}
