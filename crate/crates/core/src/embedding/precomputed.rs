use std::path::{Path, PathBuf};

use super::{
    audio_content_bytes, decode_embedding_file, normalize_prompt, sha256_hex, EmbeddingError, EncoderBackend, Modality,
};
use crate::audio::AudioBuffer;

/// Content hash under which a precomputed audio embedding is stored.
pub fn precomputed_audio_key(buf: &AudioBuffer) -> String {
    sha256_hex(&[&audio_content_bytes(buf)])
}

pub fn precomputed_text_key(prompt: &str) -> String {
    sha256_hex(&[b"text\0", normalize_prompt(prompt).as_bytes()])
}

/// Serves embeddings from a directory of embedding files named by content hash
/// (same file layout as the cache). Lets the pipeline run without a model runtime.
#[derive(Debug, Clone)]
pub struct PrecomputedBackend {
    dir: PathBuf,
    dim: usize,
    version: String,
}

impl PrecomputedBackend {
    pub fn new(dir: impl Into<PathBuf>, dim: usize) -> Result<Self, EmbeddingError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(EmbeddingError::BackendFailure(format!(
                "precomputed embedding directory {} does not exist",
                dir.display()
            )));
        }
        let version = format!("dir:{}", dir.display());
        Ok(Self { dir, dim, version })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn load(&self, key: &str) -> Result<Vec<f32>, EmbeddingError> {
        let path = self.dir.join(key);
        let bytes = std::fs::read(&path)
            .map_err(|e| EmbeddingError::BackendFailure(format!("no precomputed embedding {key}: {e}")))?;
        let v = decode_embedding_file(&bytes).map_err(|r| EmbeddingError::BackendFailure(format!("{key}: {r}")))?;
        if v.len() != self.dim {
            return Err(EmbeddingError::BackendFailure(format!(
                "{key}: dim {} but backend declares {}",
                v.len(),
                self.dim
            )));
        }
        Ok(v)
    }
}

impl EncoderBackend for PrecomputedBackend {
    fn name(&self) -> &str {
        "precomputed"
    }

    fn version(&self) -> &str {
        &self.version
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn supports(&self, _modality: Modality) -> bool {
        true
    }

    fn sample_rate(&self) -> Option<u32> {
        None
    }

    fn max_audio_seconds(&self) -> Option<f64> {
        None
    }

    fn encode_audio(&self, buf: &AudioBuffer) -> Result<Vec<f32>, EmbeddingError> {
        self.load(&precomputed_audio_key(buf))
    }

    fn encode_text(&self, prompt: &str) -> Result<Vec<f32>, EmbeddingError> {
        self.load(&precomputed_text_key(prompt))
    }
}
