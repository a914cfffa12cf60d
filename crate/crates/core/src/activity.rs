//! Speech and music activity: CSV import, a heuristic detector, and
//! threshold/merge post-processing into labelled time windows.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{self, AudioBuffer, AudioError};
use crate::features::{FeatureConfig, Stft};

#[derive(Debug, thiserror::Error)]
pub enum ActivityError {
    #[error("activity CSV row {row}: {message}")]
    ParseError { row: usize, message: String },
    #[error("activity CSV row {row}: unknown label {label:?}")]
    UnknownLabel { row: usize, label: String },
    #[error("activity CSV row {row}: time does not increase")]
    NonMonotonicTime { row: usize },
    #[error("audio of {0:.3} s is too short for activity detection (need 1 s)")]
    TooShort(f64),
    #[error("invalid timeline: {0}")]
    InvalidTimeline(String),
    #[error("invalid activity config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowLabel {
    Speech,
    Music,
}

impl fmt::Display for WindowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowLabel::Speech => "speech",
            WindowLabel::Music => "music",
        })
    }
}

impl FromStr for WindowLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "speech" => Ok(WindowLabel::Speech),
            "music" => Ok(WindowLabel::Music),
            other => Err(other.to_string()),
        }
    }
}

/// A labelled time range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start: f64,
    pub end: f64,
    pub label: WindowLabel,
}

impl Window {
    pub fn new(start: f64, end: f64, label: WindowLabel) -> Option<Self> {
        (start.is_finite() && end.is_finite() && 0.0 <= start && start < end).then_some(Self { start, end, label })
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Frame-level speech and music scores.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActivityTimeline {
    frame_times: Vec<f64>,
    speech_scores: Vec<f64>,
    music_scores: Vec<f64>,
}

impl ActivityTimeline {
    pub fn new(frame_times: Vec<f64>, speech_scores: Vec<f64>, music_scores: Vec<f64>) -> Result<Self, ActivityError> {
        if frame_times.len() != speech_scores.len() || frame_times.len() != music_scores.len() {
            return Err(ActivityError::InvalidTimeline("length mismatch".into()));
        }
        if frame_times.iter().any(|t| !t.is_finite()) || frame_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ActivityError::InvalidTimeline(
                "times must be strictly increasing".into(),
            ));
        }
        let in_unit = |v: &f64| (0.0..=1.0).contains(v);
        if !speech_scores.iter().all(in_unit) || !music_scores.iter().all(in_unit) {
            return Err(ActivityError::InvalidTimeline("scores must lie in [0, 1]".into()));
        }
        Ok(Self {
            frame_times,
            speech_scores,
            music_scores,
        })
    }

    pub fn frame_times(&self) -> &[f64] {
        &self.frame_times
    }

    pub fn speech_scores(&self) -> &[f64] {
        &self.speech_scores
    }

    pub fn music_scores(&self) -> &[f64] {
        &self.music_scores
    }

    pub fn len(&self) -> usize {
        self.frame_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_times.is_empty()
    }

    pub fn scores(&self, label: WindowLabel) -> &[f64] {
        match label {
            WindowLabel::Speech => &self.speech_scores,
            WindowLabel::Music => &self.music_scores,
        }
    }

    /// End of frame `i`: the next frame's time, or one step past the last frame.
    fn frame_end(&self, i: usize) -> f64 {
        let t = &self.frame_times;
        if i + 1 < t.len() {
            t[i + 1]
        } else if t.len() >= 2 {
            t[i] + (t[i] - t[i - 1])
        } else {
            t[i]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivityConfig {
    pub speech_threshold: f64,
    pub music_threshold: f64,
    pub min_window_seconds: f64,
    pub merge_gap_seconds: f64,
}

impl Default for ActivityConfig {
    fn default() -> Self {
        Self {
            speech_threshold: 0.5,
            music_threshold: 0.5,
            min_window_seconds: 0.5,
            merge_gap_seconds: 1.0,
        }
    }
}

impl ActivityConfig {
    pub fn validate(&self) -> Result<(), ActivityError> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.speech_threshold) || !unit(self.music_threshold) {
            return Err(ActivityError::InvalidConfig("thresholds must lie in (0, 1)".into()));
        }
        if !(self.min_window_seconds > 0.0 && self.merge_gap_seconds > 0.0) {
            return Err(ActivityError::InvalidConfig("durations must be positive".into()));
        }
        Ok(())
    }

    pub fn threshold(&self, label: WindowLabel) -> f64 {
        match label {
            WindowLabel::Speech => self.speech_threshold,
            WindowLabel::Music => self.music_threshold,
        }
    }
}

/// Result of reading an activity CSV: frame scores, or ready-made windows.
#[derive(Debug, Clone, PartialEq)]
pub enum ActivityData {
    Timeline(ActivityTimeline),
    Windows(Vec<Window>),
}

pub const FRAME_CSV_HEADER: &str = "time,speech,music";
pub const WINDOW_CSV_HEADER: &str = "start_time,end_time,label";

fn parse_f64(field: &str, row: usize, what: &str) -> Result<f64, ActivityError> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ActivityError::ParseError {
            row,
            message: format!("{what}: not a number: {field:?}"),
        })
}

/// Parses either the frame schema (`time,speech,music`) or the window schema
/// (`start_time,end_time,label`), chosen by the header row.
pub fn read_activity_csv<R: Read>(reader: R) -> Result<ActivityData, ActivityError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records().enumerate();
    let header = match records.next() {
        Some((_, rec)) => rec.map_err(|e| ActivityError::ParseError {
            row: 1,
            message: e.to_string(),
        })?,
        None => {
            return Err(ActivityError::ParseError {
                row: 1,
                message: "missing header".into(),
            })
        }
    };
    let header: Vec<&str> = header.iter().map(str::trim).collect();
    let frame_schema = header == FRAME_CSV_HEADER.split(',').collect::<Vec<_>>();
    let window_schema = header == WINDOW_CSV_HEADER.split(',').collect::<Vec<_>>();
    if !frame_schema && !window_schema {
        return Err(ActivityError::ParseError {
            row: 1,
            message: format!("expected `{FRAME_CSV_HEADER}` or `{WINDOW_CSV_HEADER}`"),
        });
    }

    let mut times = Vec::new();
    let mut speech = Vec::new();
    let mut music = Vec::new();
    let mut windows = Vec::new();
    for (idx, rec) in records {
        let row = idx + 1;
        let rec = rec.map_err(|e| ActivityError::ParseError {
            row,
            message: e.to_string(),
        })?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != 3 {
            return Err(ActivityError::ParseError {
                row,
                message: format!("expected 3 fields, got {}", rec.len()),
            });
        }
        if frame_schema {
            let t = parse_f64(&rec[0], row, "time")?;
            let s = parse_f64(&rec[1], row, "speech")?;
            let m = parse_f64(&rec[2], row, "music")?;
            if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&m) {
                return Err(ActivityError::ParseError {
                    row,
                    message: "scores must lie in [0, 1]".into(),
                });
            }
            if times.last().is_some_and(|&prev| t <= prev) {
                return Err(ActivityError::NonMonotonicTime { row });
            }
            times.push(t);
            speech.push(s);
            music.push(m);
        } else {
            let start = parse_f64(&rec[0], row, "start_time")?;
            let end = parse_f64(&rec[1], row, "end_time")?;
            let label = rec[2]
                .trim()
                .parse::<WindowLabel>()
                .map_err(|label| ActivityError::UnknownLabel { row, label })?;
            let w = Window::new(start, end, label).ok_or(ActivityError::NonMonotonicTime { row })?;
            windows.push(w);
        }
    }
    if frame_schema {
        Ok(ActivityData::Timeline(ActivityTimeline::new(times, speech, music)?))
    } else {
        windows.sort_by(|a, b| {
            a.label
                .cmp(&b.label)
                .then(a.start.total_cmp(&b.start))
                .then(a.end.total_cmp(&b.end))
        });
        Ok(ActivityData::Windows(windows))
    }
}

pub fn import_activity_csv(path: &Path) -> Result<ActivityData, ActivityError> {
    read_activity_csv(std::fs::File::open(path)?)
}

pub fn write_timeline_csv(tl: &ActivityTimeline) -> String {
    let mut out = String::from(FRAME_CSV_HEADER);
    out.push('\n');
    for i in 0..tl.len() {
        out.push_str(&format!(
            "{:.6},{:.6},{:.6}\n",
            tl.frame_times[i], tl.speech_scores[i], tl.music_scores[i]
        ));
    }
    out
}

pub fn write_windows_csv(windows: &[Window]) -> String {
    let mut out = String::from(WINDOW_CSV_HEADER);
    out.push('\n');
    for w in windows {
        out.push_str(&format!("{:.6},{:.6},{}\n", w.start, w.end, w.label));
    }
    out
}

/// Splits windows by label, each list sorted by start.
pub fn split_windows(windows: &[Window]) -> (Vec<Window>, Vec<Window>) {
    let (mut s, mut m): (Vec<Window>, Vec<Window>) = windows.iter().partition(|w| w.label == WindowLabel::Speech);
    s.sort_by(|a, b| a.start.total_cmp(&b.start));
    m.sort_by(|a, b| a.start.total_cmp(&b.start));
    (s, m)
}

fn runs(tl: &ActivityTimeline, label: WindowLabel, cfg: &ActivityConfig) -> Vec<Window> {
    let threshold = cfg.threshold(label);
    let scores = tl.scores(label);
    let mut out: Vec<Window> = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for i in 0..tl.len() {
        let (start, end) = (tl.frame_times[i], tl.frame_end(i));
        if scores[i] >= threshold {
            open = Some(match open {
                Some((s, _)) => (s, end),
                None => (start, end),
            });
        } else if let Some((s, e)) = open.take() {
            out.extend(Window::new(s, e, label));
        }
    }
    if let Some((s, e)) = open {
        out.extend(Window::new(s, e, label));
    }

    let mut merged: Vec<Window> = Vec::with_capacity(out.len());
    for w in out {
        match merged.last_mut() {
            Some(prev) if w.start - prev.end < cfg.merge_gap_seconds => prev.end = w.end,
            _ => merged.push(w),
        }
    }
    merged.retain(|w| w.duration() >= cfg.min_window_seconds);
    merged
}

/// Thresholds each label's scores into runs, merges runs separated by less
/// than the merge gap, then drops windows shorter than the minimum length.
pub fn binarize_and_merge(
    tl: &ActivityTimeline,
    cfg: &ActivityConfig,
) -> Result<(Vec<Window>, Vec<Window>), ActivityError> {
    cfg.validate()?;
    Ok((runs(tl, WindowLabel::Speech, cfg), runs(tl, WindowLabel::Music, cfg)))
}

/// Renders windows back onto a frame grid as a 0/1 step function.
pub fn windows_to_timeline(
    speech: &[Window],
    music: &[Window],
    frame_times: &[f64],
) -> Result<ActivityTimeline, ActivityError> {
    let covered = |ws: &[Window], t: f64| ws.iter().any(|w| w.start <= t && t < w.end);
    let s = frame_times.iter().map(|&t| covered(speech, t) as u8 as f64).collect();
    let m = frame_times.iter().map(|&t| covered(music, t) as u8 as f64).collect();
    ActivityTimeline::new(frame_times.to_vec(), s, m)
}

/// Centred moving average over `width` frames, truncated at the edges.
fn moving_average(values: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut prefix = Vec::with_capacity(values.len() + 1);
    prefix.push(0.0);
    for v in values {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..values.len())
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half + 1).min(values.len());
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect()
}

/// Modulation depth below which the envelope counts as steady.
const FULL_DEPTH: f64 = 0.5;
/// Level (dBFS) mapped to zero and full music weight.
const LEVEL_FLOOR_DB: f64 = -60.0;
const LEVEL_SPAN_DB: f64 = 50.0;

/// Built-in fallback detector.
///
/// Speech: share of the energy envelope's modulation spectrum falling in
/// 2-8 Hz over a 1 s window, scaled by modulation depth. Music: tonality
/// (one minus spectral flatness) weighted by frame level. Both are smoothed
/// with a 1 s moving average and clamped to `[0, 1]`.
pub fn heuristic_activity(buf: &AudioBuffer, feat_cfg: &FeatureConfig) -> Result<ActivityTimeline, ActivityError> {
    if buf.duration_seconds() < 1.0 {
        return Err(ActivityError::TooShort(buf.duration_seconds()));
    }
    feat_cfg
        .validate()
        .map_err(|e| ActivityError::InvalidConfig(e.to_string()))?;
    let resampled;
    let buf = if buf.sample_rate() != feat_cfg.sample_rate {
        resampled = audio::resample(buf, feat_cfg.sample_rate)?;
        &resampled
    } else {
        buf
    };
    let n_frames = feat_cfg
        .frame_count(buf.len())
        .ok_or(ActivityError::TooShort(buf.duration_seconds()))?;
    let samples = buf.samples();
    let frame = feat_cfg.frame_size;
    let hop = feat_cfg.hop_size;

    let mut stft = Stft::new(frame);
    let mut mags = vec![0.0; frame / 2 + 1];
    let mut envelope = Vec::with_capacity(n_frames);
    let mut music_raw = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let chunk = &samples[i * hop..i * hop + frame];
        let rms = (chunk.iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / frame as f64).sqrt();
        envelope.push(rms);
        stft.magnitudes(chunk, &mut mags);
        let tonality = 1.0 - spectral_flatness(&mags);
        let level = if rms > 0.0 {
            ((20.0 * rms.log10() - LEVEL_FLOOR_DB) / LEVEL_SPAN_DB).clamp(0.0, 1.0)
        } else {
            0.0
        };
        music_raw.push(tonality * level);
    }

    let frame_rate = 1.0 / feat_cfg.hop_seconds();
    let one_second = (frame_rate.round() as usize).max(1);
    let speech_raw = modulation_scores(&envelope, one_second, frame_rate);

    let clamp = |v: Vec<f64>| v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect::<Vec<_>>();
    let speech = clamp(moving_average(&speech_raw, one_second));
    let music = clamp(moving_average(&music_raw, one_second));
    let times = (0..n_frames).map(|i| feat_cfg.frame_time(i)).collect();
    ActivityTimeline::new(times, speech, music)
}

fn spectral_flatness(mags: &[f64]) -> f64 {
    const EPS: f64 = 1e-12;
    let power: Vec<f64> = mags[1..].iter().map(|m| m * m).collect();
    let mean = power.iter().sum::<f64>() / power.len() as f64;
    if mean <= EPS {
        return 1.0;
    }
    let log_mean = power.iter().map(|p| (p + EPS).ln()).sum::<f64>() / power.len() as f64;
    (log_mean.exp() / mean).clamp(0.0, 1.0)
}

fn modulation_scores(envelope: &[f64], window: usize, frame_rate: f64) -> Vec<f64> {
    let n = envelope.len();
    let fft_len = (2 * window).next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_len);
    let bin_hz = frame_rate / fft_len as f64;
    let half = window / 2;
    let mut buf = vec![Complex::default(); fft_len];
    (0..n)
        .map(|i| {
            let seg = &envelope[i.saturating_sub(half)..(i + half + 1).min(n)];
            let mean = seg.iter().sum::<f64>() / seg.len() as f64;
            if mean <= 1e-9 {
                return 0.0;
            }
            let var = seg.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / seg.len() as f64;
            let depth = var.sqrt() / mean;
            buf.iter_mut().for_each(|c| *c = Complex::default());
            for (b, e) in buf.iter_mut().zip(seg) {
                *b = Complex::new(e - mean, 0.0);
            }
            fft.process(&mut buf);
            let (mut band, mut total) = (0.0, 0.0);
            for (k, c) in buf.iter().enumerate().take(fft_len / 2 + 1).skip(1) {
                let p = c.norm_sqr();
                total += p;
                let hz = k as f64 * bin_hz;
                if (2.0..=8.0).contains(&hz) {
                    band += p;
                }
            }
            if total <= 0.0 {
                0.0
            } else {
                band / total * (depth / FULL_DEPTH).min(1.0)
            }
        })
        .collect()
}
