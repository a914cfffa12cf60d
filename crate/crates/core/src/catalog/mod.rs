//! The library catalog: per-song analysis records, segment classifications,
//! persistence, re-scoring, duration ablation and export helpers.

mod ablation;
mod export;
mod json;
mod pipeline;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activity::{ActivityError, Window, WindowLabel};
use crate::audio::AudioError;
use crate::boundaries::{BoundaryError, BoundarySet};
use crate::classifier::{argmax, ClassConfig, Classification, ClassifierError};
use crate::embedding::EmbeddingError;
use crate::segmentation::{Segment, SegmentError};

pub use ablation::{ablate_duration, AblationReport, AblationRow, TABLE_DURATIONS};
pub use export::{export_plot_data, export_segments, plot_activity_csv, plot_boundaries_csv, segment_file_name};
pub use json::to_canonical_json;
pub use pipeline::{
    activity_for_song, analyze_song, discover_audio, prediction_diff, rescore, scan_library, sidecar_path,
    song_id_for_bytes, ActivityOutcome, SongAnalysis,
};

/// Current catalog file format version.
pub const CATALOG_VERSION: u32 = 1;

/// Summed probabilities of a persisted classification must be this close to 1;
/// probabilities are stored rounded to 6 decimals.
const PERSISTED_PROB_SUM_TOL: f64 = 1e-4;

/// Segments of one song may leave gaps or overlaps of at most this many seconds.
const TILING_TOL: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("library root {0} does not exist")]
    RootNotFound(PathBuf),
    #[error("unsupported catalog version: {0}")]
    UnsupportedVersion(String),
    #[error("catalog schema violation: {0}")]
    SchemaViolation(String),
    #[error("no cached audio embedding for segments: {}", .0.join(", "))]
    MissingCacheEntry(Vec<String>),
    #[error("durations must be positive and strictly decreasing")]
    InvalidDurations,
    #[error("ablation duration {duration} s exceeds the {available:.3} s of audio")]
    DurationTooLong { duration: f64, available: f64 },
    #[error("unknown class {0}")]
    UnknownClass(String),
    #[error("catalog was built with encoder {catalog}, not {encoder}")]
    EncoderMismatch { catalog: String, encoder: String },
    #[error("unknown song {0}")]
    UnknownSong(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Activity(#[from] ActivityError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Where a song's speech/music windows came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivitySource {
    FrameCsv,
    WindowCsv,
    Heuristic,
    /// Audio too short for the detector; no windows.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub snapped: bool,
    pub non_music: bool,
    /// Cache key of the segment's audio embedding.
    pub embedding_key: String,
}

impl SegmentRecord {
    pub fn to_segment(&self, song_id: &str) -> Segment {
        Segment {
            song_id: song_id.to_string(),
            index: self.index,
            start: self.start,
            end: self.end,
            snapped: self.snapped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SongRecord {
    pub song_id: String,
    pub path: String,
    pub duration: f64,
    pub activity_source: ActivitySource,
    /// Boundaries before snapping (detected or imported).
    pub raw_boundaries: BoundarySet,
    /// Boundaries after snapping to speech onsets; these cut the segments.
    pub boundaries: BoundarySet,
    pub speech_windows: Vec<Window>,
    pub music_windows: Vec<Window>,
    pub segments: Vec<SegmentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkippedSong {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub version: u32,
    /// `name@version` of the encoder backend that produced the embeddings.
    pub encoder: String,
    pub class_config: ClassConfig,
    pub songs: Vec<SongRecord>,
    pub skipped: Vec<SkippedSong>,
    /// Keyed by [`segment_key`].
    pub results: BTreeMap<String, Classification>,
}

/// Catalog key of a segment: `<song_id>:<index>`.
pub fn segment_key(song_id: &str, index: usize) -> String {
    format!("{song_id}:{index}")
}

fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

impl Catalog {
    pub fn new(encoder: impl Into<String>, class_config: ClassConfig) -> Self {
        Self {
            version: CATALOG_VERSION,
            encoder: encoder.into(),
            class_config,
            songs: Vec::new(),
            skipped: Vec::new(),
            results: BTreeMap::new(),
        }
    }

    pub fn song(&self, song_id: &str) -> Option<&SongRecord> {
        self.songs.iter().find(|s| s.song_id == song_id)
    }

    pub fn result(&self, song_id: &str, index: usize) -> Option<&Classification> {
        self.results.get(&segment_key(song_id, index))
    }

    pub fn segment_count(&self) -> usize {
        self.songs.iter().map(|s| s.segments.len()).sum()
    }

    /// Rounds every float to the 6 decimals the file format stores, so that a
    /// saved and reloaded catalog compares equal to the in-memory one.
    pub fn canonicalize(&mut self) -> Result<(), CatalogError> {
        self.class_config.logit_scale = round6(self.class_config.logit_scale);
        for song in &mut self.songs {
            song.duration = round6(song.duration);
            for set in [&mut song.raw_boundaries, &mut song.boundaries] {
                let rounded = BoundarySet::from_times(
                    set.times().iter().map(|&t| round6(t)).collect(),
                    song.duration,
                    set.source(),
                )?;
                *set = rounded;
            }
            for w in song.speech_windows.iter_mut().chain(song.music_windows.iter_mut()) {
                w.start = round6(w.start);
                w.end = round6(w.end);
            }
            for seg in &mut song.segments {
                seg.start = round6(seg.start);
                seg.end = round6(seg.end);
            }
        }
        for c in self.results.values_mut() {
            c.logits.iter_mut().for_each(|v| *v = round6(*v));
            c.probs.iter_mut().for_each(|v| *v = round6(*v));
        }
        Ok(())
    }

    /// Checks every invariant a persisted catalog must satisfy.
    pub fn validate(&self) -> Result<(), CatalogError> {
        let bad = |m: String| Err(CatalogError::SchemaViolation(m));
        if self.version != CATALOG_VERSION {
            return Err(CatalogError::UnsupportedVersion(self.version.to_string()));
        }
        self.class_config
            .validate()
            .map_err(|e| CatalogError::SchemaViolation(format!("class_config: {e}")))?;
        let ids = self.class_config.ids();
        let mut keys = HashSet::new();
        for song in &self.songs {
            let sid = &song.song_id;
            if !(song.duration.is_finite() && song.duration > 0.0) {
                return bad(format!("song {sid}: bad duration"));
            }
            for set in [&song.raw_boundaries, &song.boundaries] {
                set.validate()
                    .map_err(|e| CatalogError::SchemaViolation(format!("song {sid}: {e}")))?;
                if set.song_duration() != song.duration {
                    return bad(format!("song {sid}: boundary set duration differs from song"));
                }
            }
            for (list, label) in [
                (&song.speech_windows, WindowLabel::Speech),
                (&song.music_windows, WindowLabel::Music),
            ] {
                if list
                    .iter()
                    .any(|w| w.label != label || !(0.0 <= w.start && w.start < w.end))
                {
                    return bad(format!("song {sid}: invalid {label} window"));
                }
            }
            if song.segments.is_empty() {
                return bad(format!("song {sid}: no segments"));
            }
            let mut cursor = 0.0;
            for (i, seg) in song.segments.iter().enumerate() {
                if seg.index != i || !(seg.start < seg.end) || (seg.start - cursor).abs() > TILING_TOL {
                    return bad(format!("song {sid}: segment {i} breaks the tiling"));
                }
                cursor = seg.end;
                keys.insert(segment_key(sid, i));
            }
            if (cursor - song.duration).abs() > TILING_TOL {
                return bad(format!("song {sid}: segments do not reach the song end"));
            }
        }
        for (key, c) in &self.results {
            if !keys.contains(key) {
                return bad(format!("result {key} has no segment"));
            }
            validate_classification(key, c, &ids)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        to_canonical_json(&serde_json::to_value(self).expect("catalog serialises"))
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CatalogError::SchemaViolation(e.to_string()))?;
        match value.get("version") {
            Some(v) if v.as_u64() == Some(CATALOG_VERSION as u64) => {}
            Some(v) => return Err(CatalogError::UnsupportedVersion(v.to_string())),
            None => return Err(CatalogError::SchemaViolation("missing version".into())),
        }
        let catalog: Catalog = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            if msg.contains("unknown field") || msg.contains("unknown variant") {
                CatalogError::UnsupportedVersion(msg)
            } else {
                CatalogError::SchemaViolation(msg)
            }
        })?;
        catalog.validate()?;
        Ok(catalog)
    }
}

fn validate_classification(key: &str, c: &Classification, ids: &[String]) -> Result<(), CatalogError> {
    let bad = |m: &str| Err(CatalogError::SchemaViolation(format!("result {key}: {m}")));
    if c.class_ids != ids {
        return bad("class ids differ from the catalog's class set");
    }
    if c.logits.len() != ids.len() || c.probs.len() != ids.len() {
        return bad("logit/prob count differs from class count");
    }
    if c.logits.iter().any(|l| !(l.is_finite() && l.abs() <= 1.0 + 1e-6)) {
        return bad("logit outside [-1, 1]");
    }
    if c.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return bad("probability outside [0, 1]");
    }
    if (c.probs.iter().sum::<f64>() - 1.0).abs() > PERSISTED_PROB_SUM_TOL {
        return bad("probabilities do not sum to 1");
    }
    let Some(p) = ids.iter().position(|id| *id == c.predicted) else {
        return bad("predicted class is not in the class set");
    };
    if c.probs[p] + 1e-6 < c.probs[argmax(&c.probs)] {
        return bad("predicted class is not the argmax");
    }
    Ok(())
}

pub fn save_catalog(catalog: &Catalog, path: &Path) -> Result<(), CatalogError> {
    std::fs::write(path, catalog.to_json())?;
    Ok(())
}

pub fn load_catalog(path: &Path) -> Result<Catalog, CatalogError> {
    Catalog::from_json(&std::fs::read_to_string(path)?)
}
