//! Structural boundary detection by checkerboard-kernel novelty, plus CSV import
//! of boundaries produced by external tools.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::features::{self, FeatureConfig, FeatureError, Ssm};

/// A curve whose raw peak is below this fraction of the kernel's largest
/// attainable response is treated as flat (all zero).
const FLAT_NOVELTY_RATIO: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum BoundaryError {
    #[error("kernel of {kernel} frames exceeds the {frames}-frame matrix")]
    KernelTooLarge { kernel: usize, frames: usize },
    #[error("audio of {duration:.3} s is shorter than the {required:.3} s kernel")]
    TooShort { duration: f64, required: f64 },
    #[error("boundary CSV row {row}: {message}")]
    ParseError { row: usize, message: String },
    #[error("invalid boundary set: {0}")]
    Invalid(String),
    #[error("invalid boundary config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySource {
    Novelty,
    Imported,
    Snapped,
}

/// Ordered boundary times covering a whole song, endpoints included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySet {
    times: Vec<f64>,
    song_duration: f64,
    source: BoundarySource,
}

impl BoundarySet {
    /// Sorts, clamps into `[0, duration]`, drops duplicates and adds both endpoints.
    pub fn from_times(mut times: Vec<f64>, song_duration: f64, source: BoundarySource) -> Result<Self, BoundaryError> {
        if !(song_duration.is_finite() && song_duration > 0.0) {
            return Err(BoundaryError::Invalid(format!("song duration {song_duration}")));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(BoundaryError::Invalid("non-finite boundary time".into()));
        }
        for t in &mut times {
            *t = t.clamp(0.0, song_duration);
        }
        times.push(0.0);
        times.push(song_duration);
        times.sort_by(f64::total_cmp);
        times.dedup();
        Ok(Self {
            times,
            song_duration,
            source,
        })
    }

    /// Checks the type invariants; used when loading persisted sets.
    pub fn validate(&self) -> Result<(), BoundaryError> {
        let t = &self.times;
        if t.len() < 2 || t[0] != 0.0 || *t.last().unwrap() != self.song_duration {
            return Err(BoundaryError::Invalid("endpoints missing".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(BoundaryError::Invalid("times not strictly increasing".into()));
        }
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Boundaries strictly between the endpoints.
    pub fn interior(&self) -> &[f64] {
        &self.times[1..self.times.len() - 1]
    }

    pub fn song_duration(&self) -> f64 {
        self.song_duration
    }

    pub fn source(&self) -> BoundarySource {
        self.source
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub kernel_seconds: f64,
    pub peak_median_window_seconds: f64,
    pub peak_offset: f64,
    pub min_separation_seconds: f64,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            kernel_seconds: 8.0,
            peak_median_window_seconds: 16.0,
            peak_offset: 0.05,
            min_separation_seconds: 8.0,
        }
    }
}

impl BoundaryConfig {
    pub fn validate(&self) -> Result<(), BoundaryError> {
        let all = [
            self.kernel_seconds,
            self.peak_median_window_seconds,
            self.peak_offset,
            self.min_separation_seconds,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(BoundaryError::InvalidConfig("all values must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyCurve {
    values: Vec<f64>,
    frame_times: Vec<f64>,
}

impl NoveltyCurve {
    pub fn new(values: Vec<f64>, frame_times: Vec<f64>) -> Result<Self, BoundaryError> {
        if values.len() != frame_times.len() {
            return Err(BoundaryError::Invalid("curve/time length mismatch".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(BoundaryError::Invalid("novelty must be finite and nonnegative".into()));
        }
        Ok(Self { values, frame_times })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame_times(&self) -> &[f64] {
        &self.frame_times
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn frame_period(times: &[f64]) -> f64 {
    if times.len() < 2 {
        return 1.0;
    }
    (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64
}

/// Kernel length in frames for `seconds`: rounded, forced odd, at least 3.
pub fn kernel_frames(seconds: f64, frame_period: f64) -> usize {
    let n = ((seconds / frame_period).round() as usize).max(3);
    if n.is_multiple_of(2) {
        n + 1
    } else {
        n
    }
}

/// Signed half-kernel taper: `w(u) = sign(u) * exp(-u^2 / (2 sigma^2))` with
/// `sigma = half / 2`. The checkerboard kernel is the outer product `w w^T`.
pub fn kernel_taper(half: usize) -> Vec<f64> {
    let sigma = (half as f64 / 2.0).max(0.5);
    (0..=half)
        .map(|u| {
            if u == 0 {
                0.0
            } else {
                (-(u as f64).powi(2) / (2.0 * sigma * sigma)).exp()
            }
        })
        .collect()
}

/// Foote novelty: correlation of a Gaussian-tapered checkerboard kernel along
/// the SSM diagonal.
///
/// Near the edges the kernel is shrunk symmetrically to the largest radius
/// that stays inside the matrix, so a homogeneous matrix scores zero
/// everywhere. The result is clamped at zero and max-normalised.
pub fn novelty_curve(ssm: &Ssm, kernel_seconds: f64) -> Result<NoveltyCurve, BoundaryError> {
    let n = ssm.len();
    let kernel = kernel_frames(kernel_seconds, frame_period(ssm.frame_times()));
    if kernel > n {
        return Err(BoundaryError::KernelTooLarge { kernel, frames: n });
    }
    let half = (kernel - 1) / 2;
    let taper = kernel_taper(half);

    let raw: Vec<f64> = match ssm.factors() {
        Some((frames, zero)) => factored_novelty(frames, zero, &taper),
        None => (0..n).map(|i| dense_novelty_at(ssm, i, &taper)).collect(),
    };

    let full_response = (2.0 * taper.iter().sum::<f64>()).powi(2);
    let max = raw.iter().cloned().fold(0.0, f64::max);
    let values = if max <= FLAT_NOVELTY_RATIO * full_response {
        vec![0.0; n]
    } else {
        raw.iter().map(|v| v.max(0.0) / max).collect()
    };
    NoveltyCurve::new(values, ssm.frame_times().to_vec())
}

fn radius(i: usize, n: usize, half: usize) -> usize {
    half.min(i).min(n - 1 - i)
}

fn dense_novelty_at(ssm: &Ssm, i: usize, taper: &[f64]) -> f64 {
    let r = radius(i, ssm.len(), taper.len() - 1) as isize;
    let w = |u: isize| taper[u.unsigned_abs()] * (u.signum() as f64);
    let mut acc = 0.0;
    for u in -r..=r {
        let wu = w(u);
        if wu == 0.0 {
            continue;
        }
        let a = (i as isize + u) as usize;
        for v in -r..=r {
            let wv = w(v);
            if wv != 0.0 {
                acc += wu * wv * ssm.get(a, (i as isize + v) as usize);
            }
        }
    }
    acc
}

/// With unit frames `f` the kernel sum factors as `|sum_u w(u) f[i+u]|^2`,
/// plus `w(u)^2` for every zero frame (whose self-similarity is 1, not 0).
fn factored_novelty(frames: &[Vec<f64>], zero: &[bool], taper: &[f64]) -> Vec<f64> {
    let n = frames.len();
    let dim = frames.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; dim];
    (0..n)
        .map(|i| {
            let r = radius(i, n, taper.len() - 1);
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut diag = 0.0;
            for u in 1..=r {
                let w = taper[u];
                let (after, before) = (&frames[i + u], &frames[i - u]);
                for ((a, x), y) in acc.iter_mut().zip(after).zip(before) {
                    *a += w * (x - y);
                }
                if zero[i + u] {
                    diag += w * w;
                }
                if zero[i - u] {
                    diag += w * w;
                }
            }
            features::dot(&acc, &acc) + diag
        })
        .collect()
}

fn sliding_median(values: &[f64], half: usize) -> Vec<f64> {
    let n = values.len();
    let mut scratch = Vec::with_capacity(2 * half + 1);
    (0..n)
        .map(|i| {
            scratch.clear();
            scratch.extend_from_slice(&values[i.saturating_sub(half)..(i + half + 1).min(n)]);
            let mid = scratch.len() / 2;
            let (_, m, _) = scratch.select_nth_unstable_by(mid, f64::total_cmp);
            *m
        })
        .collect()
}

/// Picks local maxima above a sliding median plus offset, suppresses peaks
/// closer than the minimum separation (larger wins, ties keep the earlier), and
/// adds both endpoints.
pub fn pick_peaks(nc: &NoveltyCurve, cfg: &BoundaryConfig, song_duration: f64) -> Result<BoundarySet, BoundaryError> {
    cfg.validate()?;
    let v = nc.values();
    let t = nc.frame_times();
    let n = v.len();
    let period = frame_period(t);
    let median_half = ((cfg.peak_median_window_seconds / period / 2.0).round() as usize).max(1);
    let medians = sliding_median(v, median_half);

    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = if i > 0 { v[i - 1] } else { f64::NEG_INFINITY };
            let right = if i + 1 < n { v[i + 1] } else { f64::NEG_INFINITY };
            v[i] > left && v[i] >= right && v[i] > medians[i] + cfg.peak_offset
        })
        .filter(|&i| t[i] > 0.0 && t[i] < song_duration)
        .collect();
    candidates.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));

    let mut kept: Vec<f64> = Vec::new();
    for i in candidates {
        if kept.iter().all(|&k| (k - t[i]).abs() >= cfg.min_separation_seconds) {
            kept.push(t[i]);
        }
    }
    BoundarySet::from_times(kept, song_duration, BoundarySource::Novelty)
}

/// Full detector: log-mel features, cosine SSM, novelty, peak picking.
pub fn detect_boundaries(
    buf: &AudioBuffer,
    feat_cfg: &FeatureConfig,
    bound_cfg: &BoundaryConfig,
) -> Result<BoundarySet, BoundaryError> {
    bound_cfg.validate()?;
    let duration = buf.duration_seconds();
    if duration < bound_cfg.kernel_seconds {
        return Err(BoundaryError::TooShort {
            duration,
            required: bound_cfg.kernel_seconds,
        });
    }
    let feat = features::log_mel_features(buf, feat_cfg)?;
    let ssm = features::self_similarity(&feat)?;
    let curve = novelty_curve(&ssm, bound_cfg.kernel_seconds)?;
    pick_peaks(&curve, bound_cfg, duration)
}

pub const BOUNDARY_CSV_HEADER: &str = "boundary_time";

/// Parses a `boundary_time` CSV. An empty file yields just the endpoints.
pub fn read_boundaries_csv<R: Read>(reader: R, song_duration: f64) -> Result<BoundarySet, BoundaryError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut times = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = rec.map_err(|e| BoundaryError::ParseError {
            row,
            message: e.to_string(),
        })?;
        if row == 1 {
            if rec.len() != 1 || rec[0].trim() != BOUNDARY_CSV_HEADER {
                return Err(BoundaryError::ParseError {
                    row,
                    message: format!("expected header `{BOUNDARY_CSV_HEADER}`"),
                });
            }
            continue;
        }
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        let field = if rec.len() == 1 { rec[0].trim() } else { "" };
        let t: f64 = field
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| BoundaryError::ParseError {
                row,
                message: format!("not a number: {:?}", rec.iter().collect::<Vec<_>>().join(",")),
            })?;
        times.push(t);
    }
    BoundarySet::from_times(times, song_duration, BoundarySource::Imported)
}

pub fn import_boundaries_csv(path: &Path, song_duration: f64) -> Result<BoundarySet, BoundaryError> {
    let file = std::fs::File::open(path)?;
    read_boundaries_csv(file, song_duration)
}

/// Writes boundary times (endpoints included) in the import schema.
pub fn write_boundaries_csv(set: &BoundarySet) -> String {
    let mut out = String::from(BOUNDARY_CSV_HEADER);
    out.push('\n');
    for t in set.times() {
        out.push_str(&format!("{t:.6}\n"));
    }
    out
}
