use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{Catalog, CatalogError, SongRecord};
use crate::activity::ActivityTimeline;
use crate::audio;

pub const PLOT_ACTIVITY_HEADER: &str = "time,speech_score,music_score";
pub const PLOT_BOUNDARY_HEADER: &str = "boundary_time,snapped";

pub fn plot_activity_csv(tl: &ActivityTimeline) -> String {
    let mut out = format!("{PLOT_ACTIVITY_HEADER}\n");
    for i in 0..tl.len() {
        out.push_str(&format!(
            "{:.6},{:.6},{:.6}\n",
            tl.frame_times()[i],
            tl.speech_scores()[i],
            tl.music_scores()[i]
        ));
    }
    out
}

/// Final boundaries, endpoints included; `snapped` marks those moved onto a
/// speech onset.
pub fn plot_boundaries_csv(song: &SongRecord) -> String {
    let raw = song.raw_boundaries.times();
    let mut out = format!("{PLOT_BOUNDARY_HEADER}\n");
    for &t in song.boundaries.times() {
        let moved = !raw.iter().any(|&r| (r - t).abs() < 1e-9);
        out.push_str(&format!("{t:.6},{moved}\n"));
    }
    out
}

/// Writes `<song_id>_activity.csv` and `<song_id>_boundaries.csv` into `dir`.
pub fn export_plot_data(
    song: &SongRecord,
    timeline: Option<&ActivityTimeline>,
    dir: &Path,
) -> Result<(PathBuf, PathBuf), CatalogError> {
    std::fs::create_dir_all(dir)?;
    let activity = dir.join(format!("{}_activity.csv", song.song_id));
    let boundaries = dir.join(format!("{}_boundaries.csv", song.song_id));
    let body = match timeline {
        Some(tl) => plot_activity_csv(tl),
        None => format!("{PLOT_ACTIVITY_HEADER}\n"),
    };
    std::fs::write(&activity, body)?;
    std::fs::write(&boundaries, plot_boundaries_csv(song))?;
    Ok((activity, boundaries))
}

pub fn segment_file_name(song_id: &str, index: usize, class_id: &str) -> String {
    format!("{song_id}_{index}_{class_id}.wav")
}

/// Writes every segment predicted as `class_id` to `out_dir` as 16-bit WAV.
/// Segments flagged `non_music` are left out.
pub fn export_segments(catalog: &Catalog, class_id: &str, out_dir: &Path) -> Result<Vec<PathBuf>, CatalogError> {
    if !catalog.class_config.ids().iter().any(|c| c == class_id) {
        return Err(CatalogError::UnknownClass(class_id.to_string()));
    }
    let mut wanted: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for song in &catalog.songs {
        for seg in &song.segments {
            let hit = catalog
                .result(&song.song_id, seg.index)
                .is_some_and(|c| c.predicted == class_id);
            if hit && !seg.non_music {
                wanted.entry(&song.song_id).or_default().push(seg.index);
            }
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (song_id, indices) in wanted {
        let song = catalog
            .song(song_id)
            .ok_or_else(|| CatalogError::UnknownSong(song_id.to_string()))?;
        let buf = audio::decode(Path::new(&song.path))?;
        for i in indices {
            let seg = &song.segments[i];
            let clip = audio::slice(&buf, seg.start, seg.end.min(buf.duration_seconds()))?;
            let path = out_dir.join(segment_file_name(song_id, i, class_id));
            audio::export_wav(&clip, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}
