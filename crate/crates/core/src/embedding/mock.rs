use std::collections::HashMap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use sha2::{Digest, Sha256};

use super::{audio_content_bytes, EmbeddingError, EncoderBackend, Modality, DEFAULT_CHUNK_SECONDS, DEFAULT_DIM};
use crate::audio::AudioBuffer;

/// What the mock hashes to embed an audio buffer.
#[derive(Debug, Clone, PartialEq)]
pub enum MockAudioMode {
    /// The raw sample bytes.
    ContentHash,
    /// The string `tone:<hz>`, with the dominant FFT frequency rounded to a
    /// multiple of `resolution_hz`. A text prompt `tone:440` therefore lands
    /// on the same vector as any audio whose strongest partial is 440 Hz.
    DominantPitch { resolution_hz: f64 },
    /// A fixed string, making every audio embedding identical.
    Constant(String),
}

/// Deterministic hash-based backend for tests and dry runs.
///
/// Every embedding is a pseudo-random vector seeded by a 64-bit digest of its
/// hash input, so equal inputs collide exactly and unrelated inputs are
/// nearly orthogonal in high dimension.
#[derive(Debug, Clone)]
pub struct MockBackend {
    name: String,
    dim: usize,
    audio_mode: MockAudioMode,
    max_audio_seconds: Option<f64>,
    planted: HashMap<String, Vec<f32>>,
    text_delay: Option<Duration>,
    version: String,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        Self {
            name: "mock".into(),
            dim: DEFAULT_DIM,
            audio_mode: MockAudioMode::ContentHash,
            max_audio_seconds: Some(DEFAULT_CHUNK_SECONDS),
            planted: HashMap::new(),
            text_delay: None,
            version: version_for(&MockAudioMode::ContentHash),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    /// The mode is part of the backend version, so catalogs and cache entries
    /// made in one mode are not reused in another.
    pub fn with_audio_mode(mut self, mode: MockAudioMode) -> Self {
        self.version = version_for(&mode);
        self.audio_mode = mode;
        self
    }

    pub fn with_max_audio_seconds(mut self, seconds: Option<f64>) -> Self {
        self.max_audio_seconds = seconds;
        self
    }

    /// Pins the raw vector returned for a hash input (a prompt, `tone:<hz>`,
    /// or a constant audio key).
    pub fn plant(mut self, input: impl Into<String>, vector: Vec<f32>) -> Self {
        self.planted.insert(input.into(), vector);
        self
    }

    /// Sleeps before each text encoding; used to hold locks open in tests.
    pub fn with_text_delay(mut self, delay: Duration) -> Self {
        self.text_delay = Some(delay);
        self
    }

    /// The vector the mock returns for a hash input.
    pub fn vector_for(&self, input: &[u8]) -> Vec<f32> {
        if let Some(v) = std::str::from_utf8(input).ok().and_then(|s| self.planted.get(s)) {
            return v.clone();
        }
        let digest = Sha256::digest(input);
        let seed = u64::from_le_bytes(digest[..8].try_into().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
    }

    fn audio_input(&self, buf: &AudioBuffer) -> Vec<u8> {
        match &self.audio_mode {
            MockAudioMode::ContentHash => audio_content_bytes(buf),
            MockAudioMode::DominantPitch { resolution_hz } => {
                let hz = dominant_frequency(buf);
                let res = resolution_hz.max(1e-9);
                format!("tone:{}", ((hz / res).round() * res).round() as i64).into_bytes()
            }
            MockAudioMode::Constant(s) => s.clone().into_bytes(),
        }
    }
}

/// Frequency of the strongest non-DC bin of a Hann-windowed FFT, zero-padded
/// to at least 1 Hz resolution. Silence reports 0.
pub fn dominant_frequency(buf: &AudioBuffer) -> f64 {
    let rate = buf.sample_rate() as usize;
    let n = buf.len().max(rate).next_power_of_two();
    let len = buf.len();
    let mut spec: Vec<Complex<f64>> = vec![Complex::default(); n];
    for (i, (c, &s)) in spec.iter_mut().zip(buf.samples()).enumerate() {
        let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos();
        *c = Complex::new(s as f64 * w, 0.0);
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut spec);
    let mut best = (0usize, 0.0f64);
    for (k, c) in spec.iter().enumerate().take(n / 2 + 1).skip(1) {
        let p = c.norm_sqr();
        if p > best.1 {
            best = (k, p);
        }
    }
    if best.1 <= 1e-18 {
        return 0.0;
    }
    best.0 as f64 * rate as f64 / n as f64
}

fn version_for(mode: &MockAudioMode) -> String {
    match mode {
        MockAudioMode::ContentHash => "1".into(),
        MockAudioMode::DominantPitch { resolution_hz } => format!("1-pitch{resolution_hz}"),
        MockAudioMode::Constant(key) => format!("1-constant:{key}"),
    }
}

impl EncoderBackend for MockBackend {
    fn name(&self) -> &str {
        &self.name
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
        self.max_audio_seconds
    }

    fn encode_audio(&self, buf: &AudioBuffer) -> Result<Vec<f32>, EmbeddingError> {
        Ok(self.vector_for(&self.audio_input(buf)))
    }

    fn encode_text(&self, prompt: &str) -> Result<Vec<f32>, EmbeddingError> {
        if let Some(d) = self.text_delay {
            std::thread::sleep(d);
        }
        Ok(self.vector_for(prompt.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Encoder;
    use std::sync::Arc;

    fn tone(hz: f64, rate: u32, seconds: f64) -> AudioBuffer {
        let n = (rate as f64 * seconds) as usize;
        AudioBuffer::new(
            (0..n)
                .map(|i| (0.4 * (2.0 * std::f64::consts::PI * hz * i as f64 / rate as f64).sin()) as f32)
                .collect(),
            rate,
        )
        .unwrap()
    }

    #[test]
    fn audio_mode_is_part_of_the_version() {
        let content = MockBackend::new();
        let pitch = MockBackend::new().with_audio_mode(MockAudioMode::DominantPitch { resolution_hz: 10.0 });
        let constant = MockBackend::new().with_audio_mode(MockAudioMode::Constant("k".into()));
        assert_ne!(content.version(), pitch.version());
        assert_ne!(content.version(), constant.version());
        assert_ne!(pitch.version(), constant.version());
    }

    #[test]
    fn pitch_mode_collides_with_tone_prompt() {
        let mock = MockBackend::new().with_audio_mode(MockAudioMode::DominantPitch { resolution_hz: 10.0 });
        let enc = Encoder::new(Arc::new(mock));
        let a = enc.embed_audio(&tone(440.0, 22050, 3.0)).unwrap();
        let t = enc.embed_text("tone:440").unwrap();
        assert!((a.dot(&t) - 1.0).abs() < 1e-6);
        let other = enc.embed_text("tone:660").unwrap();
        assert!(a.dot(&other).abs() < 0.2);
    }

    #[test]
    fn constant_mode_ignores_content() {
        let mock = MockBackend::new().with_audio_mode(MockAudioMode::Constant("same".into()));
        let enc = Encoder::new(Arc::new(mock));
        let a = enc.embed_audio(&tone(100.0, 8000, 1.0)).unwrap();
        let b = enc.embed_audio(&tone(900.0, 8000, 23.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn planted_vectors_override_hash() {
        let mock = MockBackend::new().with_dim(2).plant("up", vec![0.0, 1.0]);
        assert_eq!(mock.encode_text("up").unwrap(), vec![0.0, 1.0]);
        assert_eq!(mock.encode_text("down").unwrap().len(), 2);
    }

    #[test]
    fn dominant_frequency_of_silence_is_zero() {
        assert_eq!(
            dominant_frequency(&AudioBuffer::new(vec![0.0; 1000], 8000).unwrap()),
            0.0
        );
        assert!((dominant_frequency(&tone(1000.0, 8000, 1.0)) - 1000.0).abs() < 2.0);
    }
}
