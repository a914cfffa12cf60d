use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{segment_key, ActivitySource, Catalog, CatalogError, SegmentRecord, SkippedSong, SongRecord};
use crate::activity::{
    binarize_and_merge, heuristic_activity, import_activity_csv, split_windows, windows_to_timeline, ActivityData,
    ActivityTimeline, Window,
};
use crate::audio::{self, AudioBuffer};
use crate::boundaries::{detect_boundaries, import_boundaries_csv, BoundarySet, BoundarySource};
use crate::classifier::{classify, ClassConfig, ClassSet, Classification};
use crate::config::PipelineConfig;
use crate::embedding::Encoder;
use crate::features::FeatureConfig;
use crate::segmentation::{cut_segments, is_non_music, mark_snapped, snap_boundaries, speech_onsets};

/// `<dir>/<stem>.<kind>.csv` next to an audio file.
pub fn sidecar_path(audio_path: &Path, kind: &str) -> PathBuf {
    let stem = audio_path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    audio_path.with_file_name(format!("{stem}.{kind}.csv"))
}

/// First 16 bytes of the SHA-256 of the file contents, as hex.
pub fn song_id_for_bytes(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..16])
}

#[derive(Debug, Clone)]
pub struct ActivityOutcome {
    pub source: ActivitySource,
    /// Frame scores, when the source provides them.
    pub timeline: Option<ActivityTimeline>,
    pub speech: Vec<Window>,
    pub music: Vec<Window>,
}

impl ActivityOutcome {
    /// Frame scores for plotting. Window-only sources are rendered as a 0/1
    /// step function on the feature frame grid.
    pub fn plot_timeline(&self, duration: f64, feat: &FeatureConfig) -> Option<ActivityTimeline> {
        if let Some(tl) = &self.timeline {
            return Some(tl.clone());
        }
        let n = (duration * feat.sample_rate as f64).floor() as usize;
        let count = feat.frame_count(n).filter(|&c| c > 0)?;
        let times: Vec<f64> = (0..count).map(|i| feat.frame_time(i)).collect();
        windows_to_timeline(&self.speech, &self.music, &times).ok()
    }
}

fn clamp_windows(windows: Vec<Window>, duration: f64) -> Vec<Window> {
    windows
        .into_iter()
        .filter_map(|w| Window::new(w.start.max(0.0), w.end.min(duration), w.label))
        .collect()
}

/// Speech and music windows for a song: from its `.activity.csv` sidecar when
/// present, else from the built-in detector.
pub fn activity_for_song(
    path: &Path,
    buf: &AudioBuffer,
    cfg: &PipelineConfig,
) -> Result<ActivityOutcome, CatalogError> {
    let duration = buf.duration_seconds();
    let sidecar = sidecar_path(path, "activity");
    let (source, timeline, speech, music) = if sidecar.is_file() {
        match import_activity_csv(&sidecar)? {
            ActivityData::Timeline(tl) => {
                let (s, m) = binarize_and_merge(&tl, &cfg.activity)?;
                (ActivitySource::FrameCsv, Some(tl), s, m)
            }
            ActivityData::Windows(ws) => {
                let (s, m) = split_windows(&ws);
                (ActivitySource::WindowCsv, None, s, m)
            }
        }
    } else if duration >= 1.0 {
        let tl = heuristic_activity(buf, &cfg.features)?;
        let (s, m) = binarize_and_merge(&tl, &cfg.activity)?;
        (ActivitySource::Heuristic, Some(tl), s, m)
    } else {
        (ActivitySource::None, None, Vec::new(), Vec::new())
    };
    Ok(ActivityOutcome {
        source,
        timeline,
        speech: clamp_windows(speech, duration),
        music: clamp_windows(music, duration),
    })
}

fn raw_boundaries(path: &Path, buf: &AudioBuffer, cfg: &PipelineConfig) -> Result<BoundarySet, CatalogError> {
    let duration = buf.duration_seconds();
    let sidecar = sidecar_path(path, "boundaries");
    if sidecar.is_file() {
        Ok(import_boundaries_csv(&sidecar, duration)?)
    } else if duration >= cfg.boundaries.kernel_seconds {
        Ok(detect_boundaries(buf, &cfg.features, &cfg.boundaries)?)
    } else {
        Ok(BoundarySet::from_times(Vec::new(), duration, BoundarySource::Novelty)?)
    }
}

/// Everything produced for one song.
#[derive(Debug, Clone)]
pub struct SongAnalysis {
    pub record: SongRecord,
    /// One per segment, in segment order.
    pub classifications: Vec<Classification>,
    pub activity: ActivityOutcome,
}

/// Runs the whole per-song pipeline: decode, activity, boundaries, snapping,
/// segmentation, embedding and classification.
pub fn analyze_song(
    path: &Path,
    cfg: &PipelineConfig,
    encoder: &Encoder,
    classes: &ClassSet,
) -> Result<SongAnalysis, CatalogError> {
    if !path.is_file() {
        return Err(audio::AudioError::FileNotFound(path.to_path_buf()).into());
    }
    let bytes = std::fs::read(path)?;
    let song_id = song_id_for_bytes(&bytes);
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let buf = audio::decode_bytes(bytes, ext.as_deref())?.with_source(path.display().to_string());
    let duration = buf.duration_seconds();

    let activity = activity_for_song(path, &buf, cfg)?;
    let raw = raw_boundaries(path, &buf, cfg)?;
    let snapped = snap_boundaries(
        &raw,
        &speech_onsets(&activity.speech),
        cfg.segments.snap_tolerance_seconds,
    )?;
    let mut segments = cut_segments(duration, &snapped, &cfg.segments)?;
    mark_snapped(&mut segments, &raw, &snapped);

    let mut records = Vec::with_capacity(segments.len());
    let mut classifications = Vec::with_capacity(segments.len());
    for seg in &mut segments {
        seg.song_id = song_id.clone();
        let clip = audio::slice(&buf, seg.start, seg.end)?;
        let (emb, key) = encoder.embed_audio_cached(&clip)?;
        classifications.push(classify(&emb, classes)?);
        records.push(SegmentRecord {
            index: seg.index,
            start: seg.start,
            end: seg.end,
            snapped: seg.snapped,
            non_music: cfg.flag_non_music
                && activity.source != ActivitySource::None
                && is_non_music(seg, &activity.music),
            embedding_key: key,
        });
    }

    let record = SongRecord {
        song_id,
        path: path.display().to_string(),
        duration,
        activity_source: activity.source,
        raw_boundaries: raw,
        boundaries: snapped,
        speech_windows: activity.speech.clone(),
        music_windows: activity.music.clone(),
        segments: records,
    };
    Ok(SongAnalysis {
        record,
        classifications,
        activity,
    })
}

/// Audio files under `root`, sorted. Hidden files and directories are skipped.
pub fn discover_audio(root: &Path) -> Result<Vec<PathBuf>, CatalogError> {
    if !root.is_dir() {
        return Err(CatalogError::RootNotFound(root.to_path_buf()));
    }
    let mut files = Vec::new();
    let walker = walkdir::WalkDir::new(root)
        .follow_links(true)
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_name().to_str().is_some_and(|n| n.starts_with('.')));
    for entry in walker {
        let entry = entry.map_err(|e| CatalogError::Io(e.into()))?;
        if entry.file_type().is_file() && audio::is_audio_path(entry.path()) {
            files.push(entry.into_path());
        }
    }
    files.sort();
    Ok(files)
}

fn encoder_identity(encoder: &Encoder) -> String {
    format!("{}@{}", encoder.backend().name(), encoder.backend().version())
}

/// Analyses every audio file under `root` on `workers` threads. Songs that
/// fail are listed in `skipped`. The result does not depend on `workers`.
pub fn scan_library(
    root: &Path,
    cfg: &PipelineConfig,
    encoder: &Encoder,
    classes: &ClassSet,
    workers: usize,
) -> Result<Catalog, CatalogError> {
    let files = discover_audio(root)?;
    if files.is_empty() {
        log::warn!("no audio files under {}", root.display());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CatalogError::Io(std::io::Error::other(e)))?;
    let outcomes: Vec<(PathBuf, Result<SongAnalysis, CatalogError>)> = pool.install(|| {
        files
            .par_iter()
            .map(|p| {
                log::info!("analysing {}", p.display());
                (p.clone(), analyze_song(p, cfg, encoder, classes))
            })
            .collect()
    });

    let mut catalog = Catalog::new(encoder_identity(encoder), classes.config());
    let mut seen: HashMap<String, String> = HashMap::new();
    for (path, outcome) in outcomes {
        match outcome {
            Ok(analysis) => {
                let rec = analysis.record;
                if let Some(first) = seen.get(&rec.song_id) {
                    catalog.skipped.push(SkippedSong {
                        path: rec.path.clone(),
                        reason: format!("duplicate of {first}"),
                    });
                    continue;
                }
                seen.insert(rec.song_id.clone(), rec.path.clone());
                for (seg, c) in rec.segments.iter().zip(analysis.classifications) {
                    catalog.results.insert(segment_key(&rec.song_id, seg.index), c);
                }
                catalog.songs.push(rec);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                catalog.skipped.push(SkippedSong {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                });
            }
        }
    }
    catalog
        .songs
        .sort_by(|a, b| a.song_id.cmp(&b.song_id).then_with(|| a.path.cmp(&b.path)));
    catalog.skipped.sort_by(|a, b| a.path.cmp(&b.path));
    catalog.canonicalize()?;
    Ok(catalog)
}

/// Re-classifies every segment against a new class configuration using only
/// cached audio embeddings. Builds each class anchor from its prompts (one
/// text-encoder call per prompt) and never calls the audio encoder.
pub fn rescore(catalog: &Catalog, config: &ClassConfig, encoder: &Encoder) -> Result<Catalog, CatalogError> {
    let identity = encoder_identity(encoder);
    if catalog.encoder != identity {
        return Err(CatalogError::EncoderMismatch {
            catalog: catalog.encoder.clone(),
            encoder: identity,
        });
    }
    let mut embeddings = Vec::new();
    let mut missing = Vec::new();
    for song in &catalog.songs {
        for seg in &song.segments {
            let key = segment_key(&song.song_id, seg.index);
            match encoder.cached_audio(&seg.embedding_key) {
                Some(e) => embeddings.push((key, e)),
                None => missing.push(key),
            }
        }
    }
    if !missing.is_empty() {
        return Err(CatalogError::MissingCacheEntry(missing));
    }
    let classes = ClassSet::build(config, encoder)?;
    let mut results = BTreeMap::new();
    for (key, emb) in embeddings {
        results.insert(key, classify(&emb, &classes)?);
    }
    let mut out = catalog.clone();
    out.class_config = classes.config();
    out.results = results;
    out.canonicalize()?;
    Ok(out)
}

/// Segment keys whose predicted class differs between two catalogs.
pub fn prediction_diff(old: &Catalog, new: &Catalog) -> Vec<String> {
    new.results
        .iter()
        .filter(|(k, c)| old.results.get(*k).is_none_or(|o| o.predicted != c.predicted))
        .map(|(k, _)| k.clone())
        .collect()
}
