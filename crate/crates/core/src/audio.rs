//! Decoding, resampling, slicing and WAV export of mono PCM buffers.

use std::f64::consts::PI;
use std::fs;
use std::io::{Cursor, Seek, Write};
use std::path::{Path, PathBuf};

use symphonia::core::audio::SampleBuffer;
use symphonia::core::codecs::{DecoderOptions, CODEC_TYPE_NULL};
use symphonia::core::errors::Error as SymphoniaError;
use symphonia::core::formats::FormatOptions;
use symphonia::core::io::MediaSourceStream;
use symphonia::core::meta::MetadataOptions;
use symphonia::core::probe::Hint;

/// File extensions recognised as decodable audio.
pub const SUPPORTED_EXTENSIONS: &[&str] = &["wav", "wave", "flac", "mp3", "ogg", "oga"];

/// Half-width of the resampling kernel, in input samples at unity cutoff.
const SINC_HALF_TAPS: f64 = 32.0;

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt audio stream: {0}")]
    CorruptStream(String),
    #[error("invalid sample rate {0}")]
    InvalidRate(u32),
    #[error("range [{start}, {end}) outside buffer of {duration} s")]
    RangeOutOfBounds { start: f64, end: f64, duration: f64 },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Mono PCM audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
    source_path: Option<String>,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_path: None,
        })
    }

    pub fn with_source(mut self, path: impl Into<String>) -> Self {
        self.source_path = Some(path.into());
        self
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source_path(&self) -> Option<&str> {
        self.source_path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

fn is_supported_extension(ext: &str) -> bool {
    SUPPORTED_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str())
}

/// Returns true when `path` carries an extension this module can decode.
pub fn is_audio_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(is_supported_extension)
}

/// Decodes an audio file to a mono buffer at its native sample rate.
pub fn decode(path: &Path) -> Result<AudioBuffer, AudioError> {
    if !path.is_file() {
        return Err(AudioError::FileNotFound(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let ext = path.extension().and_then(|e| e.to_str());
    let buf = decode_bytes(bytes, ext)?;
    Ok(buf.with_source(path.display().to_string()))
}

/// Decodes an in-memory file. `extension` is a format hint; a known extension
/// that fails to probe is reported as [`AudioError::CorruptStream`].
pub fn decode_bytes(bytes: Vec<u8>, extension: Option<&str>) -> Result<AudioBuffer, AudioError> {
    let known_ext = extension.is_some_and(is_supported_extension);
    let mss = MediaSourceStream::new(Box::new(Cursor::new(bytes)), Default::default());
    let mut hint = Hint::new();
    if let Some(ext) = extension {
        hint.with_extension(ext);
    }
    let probed = symphonia::default::get_probe()
        .format(&hint, mss, &FormatOptions::default(), &MetadataOptions::default())
        .map_err(|e| {
            if known_ext {
                AudioError::CorruptStream(e.to_string())
            } else {
                AudioError::UnsupportedFormat(e.to_string())
            }
        })?;
    let mut format = probed.format;
    let track = format
        .tracks()
        .iter()
        .find(|t| t.codec_params.codec != CODEC_TYPE_NULL)
        .ok_or_else(|| AudioError::UnsupportedFormat("no decodable audio track".into()))?;
    let track_id = track.id;
    let expected_frames = track.codec_params.n_frames;
    let mut sample_rate = track.codec_params.sample_rate.unwrap_or(0);
    let mut decoder = symphonia::default::get_codecs()
        .make(&track.codec_params, &DecoderOptions::default())
        .map_err(|e| AudioError::UnsupportedFormat(e.to_string()))?;

    let mut mono: Vec<f32> = Vec::new();
    loop {
        let packet = match format.next_packet() {
            Ok(p) => p,
            Err(SymphoniaError::IoError(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(AudioError::CorruptStream(e.to_string())),
        };
        if packet.track_id() != track_id {
            continue;
        }
        let decoded = decoder
            .decode(&packet)
            .map_err(|e| AudioError::CorruptStream(e.to_string()))?;
        let spec = *decoded.spec();
        sample_rate = spec.rate;
        let channels = spec.channels.count().max(1);
        let mut sb = SampleBuffer::<f32>::new(decoded.capacity() as u64, spec);
        sb.copy_interleaved_ref(decoded);
        let inv = 1.0 / channels as f32;
        mono.extend(
            sb.samples()
                .chunks_exact(channels)
                .map(|frame| frame.iter().sum::<f32>() * inv),
        );
    }
    if let Some(n) = expected_frames {
        if (mono.len() as u64) < n {
            return Err(AudioError::CorruptStream(format!(
                "stream truncated: decoded {} of {} frames",
                mono.len(),
                n
            )));
        }
    }
    if sample_rate == 0 {
        return Err(AudioError::CorruptStream("missing sample rate".into()));
    }
    AudioBuffer::new(mono, sample_rate).map_err(|e| AudioError::CorruptStream(e.to_string()))
}

fn blackman(x: f64, half_width: f64) -> f64 {
    let r = x / half_width;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    0.42 + 0.5 * (PI * r).cos() + 0.08 * (2.0 * PI * r).cos()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling by Blackman-windowed sinc interpolation.
///
/// The output has `round(len * target / source)` samples. When downsampling
/// the kernel cutoff drops to the target Nyquist frequency.
pub fn resample(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::InvalidRate(target_rate));
    }
    if target_rate == buf.sample_rate {
        return Ok(buf.clone());
    }
    let ratio = target_rate as f64 / buf.sample_rate as f64;
    let out_len = (buf.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half_width = SINC_HALF_TAPS / cutoff;
    let input = &buf.samples;
    let n_in = input.len() as isize;

    let out: Vec<f32> = (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = (t - half_width).ceil() as isize;
            let hi = (t + half_width).floor() as isize;
            let mut acc = 0.0f64;
            for k in lo.max(0)..=hi.min(n_in - 1) {
                let d = t - k as f64;
                acc += input[k as usize] as f64 * cutoff * sinc(cutoff * d) * blackman(d, half_width);
            }
            acc as f32
        })
        .collect();
    let mut resampled = AudioBuffer::new(out, target_rate)?;
    resampled.source_path = buf.source_path.clone();
    Ok(resampled)
}

/// Cuts `[start_s, end_s)` out of the buffer, rounding both edges to the nearest sample.
pub fn slice(buf: &AudioBuffer, start_s: f64, end_s: f64) -> Result<AudioBuffer, AudioError> {
    let duration = buf.duration_seconds();
    let eps = 0.5 / buf.sample_rate as f64;
    if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || start_s >= end_s || end_s > duration + eps {
        return Err(AudioError::RangeOutOfBounds {
            start: start_s,
            end: end_s,
            duration,
        });
    }
    let rate = buf.sample_rate as f64;
    let a = ((start_s * rate).round() as usize).min(buf.len());
    let b = ((end_s * rate).round() as usize).min(buf.len());
    let mut out = AudioBuffer::new(buf.samples[a..b].to_vec(), buf.sample_rate)?;
    out.source_path = buf.source_path.clone();
    Ok(out)
}

/// Float to PCM16 with clipping: `round(x * 32768)` saturated to `[-32768, 32767]`.
pub fn to_pcm16(x: f32) -> i16 {
    (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn write_wav<W: Write + Seek>(buf: &AudioBuffer, writer: W) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::new(writer, spec).map_err(hound_to_io)?;
    {
        let mut pcm = w.get_i16_writer(buf.samples.len() as u32);
        for &s in &buf.samples {
            pcm.write_sample(to_pcm16(s));
        }
        pcm.flush().map_err(hound_to_io)?;
    }
    w.finalize().map_err(hound_to_io)?;
    Ok(())
}

fn hound_to_io(e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io) => AudioError::Io(io),
        other => AudioError::Io(std::io::Error::other(other.to_string())),
    }
}

/// Encodes the buffer as a 44-byte-header mono PCM16 WAV in memory.
pub fn wav_bytes(buf: &AudioBuffer) -> Result<Vec<u8>, AudioError> {
    let mut cursor = Cursor::new(Vec::with_capacity(44 + 2 * buf.len()));
    write_wav(buf, &mut cursor)?;
    Ok(cursor.into_inner())
}

/// Writes the buffer as a mono 16-bit PCM WAV file.
pub fn export_wav(buf: &AudioBuffer, path: &Path) -> Result<(), AudioError> {
    let bytes = wav_bytes(buf)?;
    fs::write(path, bytes)?;
    Ok(())
}
