//! Frame-level log-mel features and cosine self-similarity.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{self, AudioBuffer, AudioError};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("buffer of {samples} samples is shorter than one {frame_size}-sample frame")]
    TooShort { samples: usize, frame_size: usize },
    #[error("self-similarity needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("invalid SSM: {0}")]
    InvalidSsm(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub frame_size: usize,
    pub hop_size: usize,
    pub n_mels: usize,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            frame_size: 2048,
            hop_size: 512,
            n_mels: 64,
            log_floor: 1e-6,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.hop_size == 0 || self.frame_size < self.hop_size {
            return Err(FeatureError::InvalidConfig("require frame_size >= hop_size > 0".into()));
        }
        if self.n_mels == 0 || self.sample_rate == 0 {
            return Err(FeatureError::InvalidConfig(
                "n_mels and sample_rate must be positive".into(),
            ));
        }
        if !(self.log_floor > 0.0) {
            return Err(FeatureError::InvalidConfig("log_floor must be positive".into()));
        }
        Ok(())
    }

    /// Seconds between consecutive frames.
    pub fn hop_seconds(&self) -> f64 {
        self.hop_size as f64 / self.sample_rate as f64
    }

    /// Number of frames for a buffer of `len` samples, `None` if shorter than a frame.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.frame_size).then(|| 1 + (len - self.frame_size) / self.hop_size)
    }

    pub fn frame_time(&self, index: usize) -> f64 {
        (index * self.hop_size) as f64 / self.sample_rate as f64
            + self.frame_size as f64 / (2.0 * self.sample_rate as f64)
    }
}

/// T x F feature frames with their centre timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: Vec<Vec<f64>>,
    frame_times: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(frames: Vec<Vec<f64>>, frame_times: Vec<f64>) -> Result<Self, FeatureError> {
        if frames.len() != frame_times.len() {
            return Err(FeatureError::InvalidConfig(format!(
                "{} frames but {} timestamps",
                frames.len(),
                frame_times.len()
            )));
        }
        if frame_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(FeatureError::InvalidConfig(
                "frame times must be strictly increasing".into(),
            ));
        }
        let width = frames.first().map_or(0, Vec::len);
        if frames
            .iter()
            .any(|f| f.len() != width || f.iter().any(|v| !v.is_finite()))
        {
            return Err(FeatureError::InvalidConfig("ragged or non-finite frames".into()));
        }
        Ok(Self { frames, frame_times })
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn frame_times(&self) -> &[f64] {
        &self.frame_times
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Copy with each frame scaled to unit L2 norm; all-zero frames stay zero.
    pub fn l2_normalized(&self) -> FeatureMatrix {
        let frames = self
            .frames
            .iter()
            .map(|f| {
                let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    f.iter().map(|v| v / norm).collect()
                } else {
                    f.clone()
                }
            })
            .collect();
        FeatureMatrix {
            frames,
            frame_times: self.frame_times.clone(),
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// One triangular filter stored sparsely from `first_bin`.
#[derive(Debug, Clone)]
struct MelFilter {
    first_bin: usize,
    weights: Vec<f64>,
}

/// HTK-style triangular mel filterbank spanning 0 Hz to Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    filters: Vec<MelFilter>,
    edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, fft_size: usize, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let n_bins = fft_size / 2 + 1;
        let filters = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
                let mut first_bin = None;
                let mut weights = Vec::new();
                for k in 0..n_bins {
                    let w = triangle(k as f64 * bin_hz, lo, mid, hi);
                    if w > 0.0 {
                        first_bin.get_or_insert(k);
                        weights.push(w);
                    } else if first_bin.is_some() {
                        break;
                    }
                }
                MelFilter {
                    first_bin: first_bin.unwrap_or(0),
                    weights,
                }
            })
            .collect();
        Self { filters, edges_hz }
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    /// Weight of band `m` at frequency `hz`.
    pub fn weight_at(&self, m: usize, hz: f64) -> f64 {
        triangle(hz, self.edges_hz[m], self.edges_hz[m + 1], self.edges_hz[m + 2])
    }

    pub fn apply(&self, magnitudes: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.filters) {
            *o = f
                .weights
                .iter()
                .zip(&magnitudes[f.first_bin..])
                .map(|(w, m)| w * m)
                .sum();
        }
    }
}

fn triangle(hz: f64, lo: f64, mid: f64, hi: f64) -> f64 {
    if hz <= lo || hz >= hi {
        0.0
    } else if hz <= mid {
        (hz - lo) / (mid - lo)
    } else {
        (hi - hz) / (hi - mid)
    }
}

pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Streaming magnitude-STFT helper reused by the activity detector.
pub(crate) struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    scratch: Vec<Complex<f64>>,
    buf: Vec<Complex<f64>>,
}

impl Stft {
    pub(crate) fn new(frame_size: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(frame_size);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Self {
            fft,
            window: hann(frame_size),
            scratch,
            buf: vec![Complex::default(); frame_size],
        }
    }

    /// Magnitudes of bins `0..=N/2` for the frame starting at `samples[0]`.
    pub(crate) fn magnitudes(&mut self, samples: &[f32], out: &mut [f64]) {
        for ((b, &s), w) in self.buf.iter_mut().zip(samples).zip(&self.window) {
            *b = Complex::new(s as f64 * w, 0.0);
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (o, c) in out.iter_mut().zip(&self.buf) {
            *o = c.norm();
        }
    }
}

/// Log-mel frames: Hann-windowed magnitude STFT, HTK mel filterbank, `ln(x + log_floor)`.
///
/// The buffer is resampled to `cfg.sample_rate` first when rates differ. Frames
/// are returned unnormalised; [`self_similarity`] applies the L2 normalisation.
pub fn log_mel_features(buf: &AudioBuffer, cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    cfg.validate()?;
    let resampled;
    let buf = if buf.sample_rate() != cfg.sample_rate {
        resampled = audio::resample(buf, cfg.sample_rate)?;
        &resampled
    } else {
        buf
    };
    let n_frames = cfg.frame_count(buf.len()).ok_or(FeatureError::TooShort {
        samples: buf.len(),
        frame_size: cfg.frame_size,
    })?;
    let bank = MelFilterbank::new(cfg.n_mels, cfg.frame_size, cfg.sample_rate);
    let mut stft = Stft::new(cfg.frame_size);
    let mut mags = vec![0.0; cfg.frame_size / 2 + 1];
    let samples = buf.samples();
    let mut frames = Vec::with_capacity(n_frames);
    let mut times = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let start = i * cfg.hop_size;
        stft.magnitudes(&samples[start..start + cfg.frame_size], &mut mags);
        let mut mel = vec![0.0; cfg.n_mels];
        bank.apply(&mags, &mut mel);
        for v in &mut mel {
            *v = (*v + cfg.log_floor).ln();
        }
        frames.push(mel);
        times.push(cfg.frame_time(i));
    }
    FeatureMatrix::new(frames, times)
}

#[derive(Debug, Clone, PartialEq)]
enum SsmRepr {
    /// Unit-norm frames; entries are computed on demand as dot products.
    Factored {
        frames: Vec<Vec<f64>>,
        zero: Vec<bool>,
    },
    Dense {
        values: Vec<f64>,
        n: usize,
    },
}

/// Cosine self-similarity matrix.
///
/// Built from features it is kept in factored form (unit frames), so the
/// full T x T matrix is never materialised; [`Ssm::from_dense`] wraps an
/// explicit matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Ssm {
    repr: SsmRepr,
    frame_times: Vec<f64>,
}

impl Ssm {
    pub fn from_dense(values: Vec<Vec<f64>>, frame_times: Vec<f64>) -> Result<Self, FeatureError> {
        let n = values.len();
        if frame_times.len() != n {
            return Err(FeatureError::InvalidSsm("time/size mismatch".into()));
        }
        if frame_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(FeatureError::InvalidSsm(
                "frame times must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|r| r.len() != n) {
            return Err(FeatureError::InvalidSsm("matrix is not square".into()));
        }
        for i in 0..n {
            for j in 0..n {
                let v = values[i][j];
                if !v.is_finite() || v.abs() > 1.0 + 1e-6 || (v - values[j][i]).abs() > 1e-6 {
                    return Err(FeatureError::InvalidSsm(format!("bad entry at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            repr: SsmRepr::Dense {
                values: values.into_iter().flatten().collect(),
                n,
            },
            frame_times,
        })
    }

    pub fn len(&self) -> usize {
        self.frame_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_times.is_empty()
    }

    pub fn frame_times(&self) -> &[f64] {
        &self.frame_times
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.repr {
            SsmRepr::Dense { values, n } => values[i * n + j],
            SsmRepr::Factored { frames, zero } => {
                if i == j {
                    1.0
                } else if zero[i] || zero[j] {
                    0.0
                } else {
                    dot(&frames[i], &frames[j]).clamp(-1.0, 1.0)
                }
            }
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n).map(|i| (0..n).map(|j| self.get(i, j)).collect()).collect()
    }

    /// Unit frames and zero-frame flags when the matrix is in factored form.
    pub(crate) fn factors(&self) -> Option<(&[Vec<f64>], &[bool])> {
        match &self.repr {
            SsmRepr::Factored { frames, zero } => Some((frames, zero)),
            SsmRepr::Dense { .. } => None,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine self-similarity of feature frames.
pub fn self_similarity(feat: &FeatureMatrix) -> Result<Ssm, FeatureError> {
    if feat.len() < 2 {
        return Err(FeatureError::TooFewFrames(feat.len()));
    }
    let unit = feat.l2_normalized();
    let zero = unit.frames.iter().map(|f| f.iter().all(|&v| v == 0.0)).collect();
    Ok(Ssm {
        repr: SsmRepr::Factored {
            frames: unit.frames,
            zero,
        },
        frame_times: unit.frame_times,
    })
}
