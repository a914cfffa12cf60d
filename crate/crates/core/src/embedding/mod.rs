//! Audio and text embeddings in a shared unit-norm space.
//!
//! Backends implement [`EncoderBackend`]. The [`Encoder`] wraps one backend and
//! enforces the module contract: input resampling, long-audio chunk averaging,
//! normalisation, call counting, optional serialisation of inference and the
//! persistent cache.

mod cache;
mod mock;
#[cfg(feature = "onnx")]
mod onnx;
mod precomputed;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{self, AudioBuffer, AudioError};

pub use cache::{cache_get_or_compute, decode_embedding_file, encode_embedding_file, EmbeddingCache, CACHE_MAGIC};
pub use mock::{MockAudioMode, MockBackend};
#[cfg(feature = "onnx")]
pub use onnx::OnnxBackend;
pub use precomputed::{precomputed_audio_key, precomputed_text_key, PrecomputedBackend};

/// Default embedding width of the reference audio/text encoder pair.
pub const DEFAULT_DIM: usize = 512;

/// Chunk length used when a backend declares no receptive field of its own.
pub const DEFAULT_CHUNK_SECONDS: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("backend {backend} does not support {modality} input")]
    UnsupportedModality { backend: String, modality: Modality },
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("corrupt cache entry {key}: {reason}")]
    CacheCorrupt { key: String, reason: String },
    #[error("invalid embedding: {0}")]
    InvalidVector(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    Text,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Audio => "audio",
            Modality::Text => "text",
        })
    }
}

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    vector: Vec<f32>,
    kind: Modality,
}

impl Embedding {
    /// Normalises `vector` to unit length. Zero or non-finite input is rejected.
    pub fn from_vector(vector: Vec<f32>, kind: Modality) -> Result<Self, EmbeddingError> {
        if vector.is_empty() {
            return Err(EmbeddingError::InvalidVector("empty vector".into()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidVector("non-finite component".into()));
        }
        let norm = vector.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if !(norm > 1e-12) {
            return Err(EmbeddingError::InvalidVector("zero-norm vector".into()));
        }
        Ok(Self {
            vector: vector.iter().map(|&v| (v as f64 / norm) as f32).collect(),
            kind,
        })
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn kind(&self) -> Modality {
        self.kind
    }

    pub fn with_kind(mut self, kind: Modality) -> Self {
        self.kind = kind;
        self
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.vector
            .iter()
            .zip(&other.vector)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }
}

/// A pair of audio/text encoders projecting into one space.
pub trait EncoderBackend: Send + Sync {
    fn name(&self) -> &str;

    fn version(&self) -> &str;

    fn dim(&self) -> usize;

    fn supports(&self, modality: Modality) -> bool;

    /// Input rate the audio encoder requires; `None` accepts any rate.
    fn sample_rate(&self) -> Option<u32>;

    /// Longest input the audio encoder sees at once; longer buffers are
    /// embedded as 50%-overlapping chunks of this length and averaged.
    fn max_audio_seconds(&self) -> Option<f64>;

    /// Whether inference may run on several threads at once.
    fn concurrent(&self) -> bool {
        true
    }

    fn encode_audio(&self, buf: &AudioBuffer) -> Result<Vec<f32>, EmbeddingError>;

    fn encode_text(&self, prompt: &str) -> Result<Vec<f32>, EmbeddingError>;
}

/// Trims and collapses internal whitespace.
pub fn normalize_prompt(prompt: &str) -> String {
    prompt.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Raw bytes identifying an audio buffer's content: tag, rate, f32 LE samples.
pub fn audio_content_bytes(buf: &AudioBuffer) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(10 + 4 * buf.len());
    bytes.extend_from_slice(b"audio\0");
    bytes.extend_from_slice(&buf.sample_rate().to_le_bytes());
    for s in buf.samples() {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    bytes
}

pub(crate) fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Start offsets (in samples) of the chunks covering `len` samples.
/// The last chunk is aligned to the end so every chunk is full length.
pub fn chunk_starts(len: usize, chunk: usize) -> Vec<usize> {
    if chunk == 0 || len <= chunk {
        return vec![0];
    }
    let hop = (chunk / 2).max(1);
    let mut starts: Vec<usize> = (0..).map(|k| k * hop).take_while(|&s| s + chunk < len).collect();
    starts.push(len - chunk);
    starts.dedup();
    starts
}

/// Contract-enforcing front end to a backend.
pub struct Encoder {
    backend: Arc<dyn EncoderBackend>,
    cache: Option<EmbeddingCache>,
    audio_calls: AtomicUsize,
    text_calls: AtomicUsize,
    serial: Mutex<()>,
}

impl fmt::Debug for Encoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Encoder")
            .field("backend", &self.backend.name())
            .field("cache", &self.cache)
            .finish()
    }
}

impl Encoder {
    pub fn new(backend: Arc<dyn EncoderBackend>) -> Self {
        Self {
            backend,
            cache: None,
            audio_calls: AtomicUsize::new(0),
            text_calls: AtomicUsize::new(0),
            serial: Mutex::new(()),
        }
    }

    pub fn with_cache(mut self, cache: EmbeddingCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn backend(&self) -> &dyn EncoderBackend {
        self.backend.as_ref()
    }

    pub fn cache(&self) -> Option<&EmbeddingCache> {
        self.cache.as_ref()
    }

    /// Number of audio-encoder invocations so far (one per chunk).
    pub fn audio_calls(&self) -> usize {
        self.audio_calls.load(Ordering::SeqCst)
    }

    pub fn text_calls(&self) -> usize {
        self.text_calls.load(Ordering::SeqCst)
    }

    fn guarded<T>(&self, f: impl FnOnce() -> T) -> T {
        if self.backend.concurrent() {
            f()
        } else {
            let _g = self.serial.lock().unwrap_or_else(|e| e.into_inner());
            f()
        }
    }

    fn require(&self, modality: Modality) -> Result<(), EmbeddingError> {
        if self.backend.supports(modality) {
            Ok(())
        } else {
            Err(EmbeddingError::UnsupportedModality {
                backend: self.backend.name().to_string(),
                modality,
            })
        }
    }

    fn encode_chunk(&self, buf: &AudioBuffer) -> Result<Embedding, EmbeddingError> {
        self.audio_calls.fetch_add(1, Ordering::SeqCst);
        let raw = self.guarded(|| self.backend.encode_audio(buf))?;
        if raw.len() != self.backend.dim() {
            return Err(EmbeddingError::BackendFailure(format!(
                "expected dim {}, backend returned {}",
                self.backend.dim(),
                raw.len()
            )));
        }
        Embedding::from_vector(raw, Modality::Audio).map_err(|e| EmbeddingError::BackendFailure(e.to_string()))
    }

    /// Embeds audio, bypassing the cache.
    pub fn embed_audio(&self, buf: &AudioBuffer) -> Result<Embedding, EmbeddingError> {
        self.require(Modality::Audio)?;
        let resampled;
        let buf = match self.backend.sample_rate() {
            Some(rate) if rate != buf.sample_rate() => {
                resampled = audio::resample(buf, rate)?;
                &resampled
            }
            _ => buf,
        };
        let chunk = self
            .backend
            .max_audio_seconds()
            .map(|s| (s * buf.sample_rate() as f64).round() as usize);
        let starts = match chunk {
            Some(c) => chunk_starts(buf.len(), c),
            None => vec![0],
        };
        if starts.len() == 1 {
            return self.encode_chunk(buf);
        }
        let chunk = chunk.unwrap_or(buf.len());
        let mut parts = Vec::with_capacity(starts.len());
        for start in starts {
            let piece = AudioBuffer::new(buf.samples()[start..start + chunk].to_vec(), buf.sample_rate())?;
            parts.push(self.encode_chunk(&piece)?);
        }
        if parts.iter().all(|e| e == &parts[0]) {
            return Ok(parts.swap_remove(0));
        }
        let mut sum = vec![0.0f64; self.backend.dim()];
        for e in &parts {
            for (s, &v) in sum.iter_mut().zip(e.vector()) {
                *s += v as f64;
            }
        }
        Embedding::from_vector(sum.into_iter().map(|v| v as f32).collect(), Modality::Audio)
            .map_err(|e| EmbeddingError::BackendFailure(format!("chunk average degenerate: {e}")))
    }

    pub fn embed_text(&self, prompt: &str) -> Result<Embedding, EmbeddingError> {
        self.require(Modality::Text)?;
        let prompt = normalize_prompt(prompt);
        if prompt.is_empty() {
            return Err(EmbeddingError::EmptyPrompt);
        }
        self.text_calls.fetch_add(1, Ordering::SeqCst);
        let raw = self.guarded(|| self.backend.encode_text(&prompt))?;
        if raw.len() != self.backend.dim() {
            return Err(EmbeddingError::BackendFailure(format!(
                "expected dim {}, backend returned {}",
                self.backend.dim(),
                raw.len()
            )));
        }
        Embedding::from_vector(raw, Modality::Text).map_err(|e| EmbeddingError::BackendFailure(e.to_string()))
    }

    /// Cache key of an audio buffer for this backend.
    pub fn audio_key(&self, buf: &AudioBuffer) -> String {
        sha256_hex(&[
            self.backend.name().as_bytes(),
            self.backend.version().as_bytes(),
            b"audio",
            &audio_content_bytes(buf),
        ])
    }

    pub fn text_key(&self, prompt: &str) -> String {
        sha256_hex(&[
            self.backend.name().as_bytes(),
            self.backend.version().as_bytes(),
            b"text",
            normalize_prompt(prompt).as_bytes(),
        ])
    }

    /// Embeds audio through the cache when one is attached. Returns the key too.
    pub fn embed_audio_cached(&self, buf: &AudioBuffer) -> Result<(Embedding, String), EmbeddingError> {
        let key = self.audio_key(buf);
        let emb = match &self.cache {
            Some(cache) => cache_get_or_compute(cache, &key, Modality::Audio, || self.embed_audio(buf))?,
            None => self.embed_audio(buf)?,
        };
        Ok((emb, key))
    }

    /// Looks up a cached audio embedding without touching the backend.
    /// Corrupt entries read as absent.
    pub fn cached_audio(&self, key: &str) -> Option<Embedding> {
        let cache = self.cache.as_ref()?;
        match cache.get(key, Modality::Audio) {
            Ok(Some(e)) if e.dim() == self.backend.dim() => Some(e),
            _ => None,
        }
    }
}
