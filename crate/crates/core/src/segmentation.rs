//! Boundary snapping to speech onsets and cutting songs into phrase-length segments.

use serde::{Deserialize, Serialize};

use crate::activity::Window;
use crate::boundaries::{BoundaryError, BoundarySet, BoundarySource};

#[derive(Debug, thiserror::Error)]
pub enum SegmentError {
    #[error("invalid segment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub snap_tolerance_seconds: f64,
    pub min_segment_seconds: f64,
    pub max_segment_seconds: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            snap_tolerance_seconds: 2.0,
            min_segment_seconds: 4.0,
            max_segment_seconds: 30.0,
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if !(self.min_segment_seconds > 0.0 && self.min_segment_seconds < self.max_segment_seconds) {
            return Err(SegmentError::InvalidConfig("require 0 < min < max".into()));
        }
        if !(self.snap_tolerance_seconds >= 0.0) {
            return Err(SegmentError::InvalidConfig("tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

/// A cut region `[start, end)` of one song.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub song_id: String,
    pub index: usize,
    pub start: f64,
    pub end: f64,
    /// The segment starts on a boundary that was moved onto a speech onset.
    pub snapped: bool,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Start times of the speech windows, ascending.
pub fn speech_onsets(speech: &[Window]) -> Vec<f64> {
    let mut onsets: Vec<f64> = speech.iter().map(|w| w.start).collect();
    onsets.sort_by(f64::total_cmp);
    onsets
}

fn nearest_within(sorted: &[f64], t: f64, tolerance: f64) -> Option<f64> {
    let idx = sorted.partition_point(|&o| o < t);
    let before = idx.checked_sub(1).map(|i| sorted[i]);
    let after = sorted.get(idx).copied();
    let best = match (before, after) {
        (Some(b), Some(a)) => {
            if t - b <= a - t {
                b
            } else {
                a
            }
        }
        (Some(b), None) => b,
        (None, Some(a)) => a,
        (None, None) => return None,
    };
    ((best - t).abs() <= tolerance).then_some(best)
}

/// Moves each interior boundary to the nearest onset within `tolerance`
/// (equidistant onsets resolve to the earlier one). Endpoints never move;
/// boundaries landing on the same time collapse into one.
pub fn snap_boundaries(b: &BoundarySet, onsets: &[f64], tolerance: f64) -> Result<BoundarySet, SegmentError> {
    let mut sorted: Vec<f64> = onsets.iter().copied().filter(|o| o.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let moved: Vec<f64> = b
        .interior()
        .iter()
        .map(|&t| nearest_within(&sorted, t, tolerance).unwrap_or(t))
        .collect();
    Ok(BoundarySet::from_times(
        moved,
        b.song_duration(),
        BoundarySource::Snapped,
    )?)
}

/// Turns consecutive boundaries into segments and repairs their lengths.
///
/// Left to right, a segment shorter than the minimum is merged into its
/// right neighbour (the last one merges left). Afterwards any segment longer
/// than the maximum is split into `ceil(len / max)` equal parts.
pub fn cut_segments(duration: f64, b: &BoundarySet, cfg: &SegmentConfig) -> Result<Vec<Segment>, SegmentError> {
    cfg.validate()?;
    let times = b.times();
    let mut spans: Vec<(f64, f64)> = times.windows(2).map(|w| (w[0], w[1])).collect();
    if let Some(last) = spans.last_mut() {
        last.1 = duration;
    }

    let mut i = 0;
    while i < spans.len() && spans.len() > 1 {
        if spans[i].1 - spans[i].0 < cfg.min_segment_seconds {
            if i + 1 < spans.len() {
                spans[i].1 = spans[i + 1].1;
                spans.remove(i + 1);
                continue;
            }
            spans[i - 1].1 = spans[i].1;
            spans.remove(i);
            break;
        }
        i += 1;
    }

    let mut out = Vec::with_capacity(spans.len());
    for (start, end) in spans {
        let len = end - start;
        let parts = ((len / cfg.max_segment_seconds) - 1e-12).ceil().max(1.0) as usize;
        for k in 0..parts {
            let s = start + len * k as f64 / parts as f64;
            let e = if k + 1 == parts {
                end
            } else {
                start + len * (k + 1) as f64 / parts as f64
            };
            out.push(Segment {
                song_id: String::new(),
                index: out.len(),
                start: s,
                end: e,
                snapped: false,
            });
        }
    }
    Ok(out)
}

/// Flags segments whose start was produced by snapping, given the pre-snap set.
pub fn mark_snapped(segments: &mut [Segment], raw: &BoundarySet, snapped: &BoundarySet) {
    let interior = snapped.interior();
    for seg in segments {
        seg.snapped = interior.contains(&seg.start) && !raw.times().contains(&seg.start);
    }
}

/// True when less than 10% of the segment overlaps music windows.
pub fn is_non_music(segment: &Segment, music: &[Window]) -> bool {
    let overlap: f64 = music
        .iter()
        .map(|w| (w.end.min(segment.end) - w.start.max(segment.start)).max(0.0))
        .sum();
    overlap < 0.1 * segment.duration()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activity::WindowLabel;

    fn set(times: &[f64], dur: f64) -> BoundarySet {
        BoundarySet::from_times(times.to_vec(), dur, BoundarySource::Imported).unwrap()
    }

    fn spans(segs: &[Segment]) -> Vec<(f64, f64)> {
        segs.iter().map(|s| (s.start, s.end)).collect()
    }

    #[test]
    fn onsets_sorted() {
        let w = |a, b| Window::new(a, b, WindowLabel::Speech).unwrap();
        assert_eq!(speech_onsets(&[w(10.0, 20.0), w(40.0, 55.0)]), vec![10.0, 40.0]);
        assert!(speech_onsets(&[]).is_empty());
        assert_eq!(speech_onsets(&[w(40.0, 55.0), w(10.0, 20.0)]), vec![10.0, 40.0]);
    }

    #[test]
    fn snapping_rules() {
        let b = set(&[10.0], 30.0);
        assert_eq!(
            snap_boundaries(&b, &[9.8, 15.0], 0.5).unwrap().times(),
            &[0.0, 9.8, 30.0]
        );
        assert_eq!(snap_boundaries(&b, &[12.0], 0.5).unwrap().times(), &[0.0, 10.0, 30.0]);
        assert_eq!(
            snap_boundaries(&b, &[9.5, 10.5], 1.0).unwrap().times(),
            &[0.0, 9.5, 30.0]
        );
        let snapped = snap_boundaries(&b, &[], 1.0).unwrap();
        assert_eq!(snapped.source(), BoundarySource::Snapped);
    }

    #[test]
    fn snapping_collapses_and_keeps_endpoints() {
        let b = set(&[9.0, 11.0], 30.0);
        assert_eq!(snap_boundaries(&b, &[10.0], 1.5).unwrap().times(), &[0.0, 10.0, 30.0]);
        let b = set(&[0.5, 29.5], 30.0);
        assert_eq!(snap_boundaries(&b, &[0.0, 30.0], 1.0).unwrap().times(), &[0.0, 30.0]);
    }

    #[test]
    fn cut_regular() {
        let segs = cut_segments(60.0, &set(&[20.0, 40.0], 60.0), &SegmentConfig::default()).unwrap();
        assert_eq!(spans(&segs), vec![(0.0, 20.0), (20.0, 40.0), (40.0, 60.0)]);
        assert_eq!(segs.iter().map(|s| s.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn cut_merges_short_right() {
        let segs = cut_segments(20.0, &set(&[2.0], 20.0), &SegmentConfig::default()).unwrap();
        assert_eq!(spans(&segs), vec![(0.0, 20.0)]);
        let segs = cut_segments(20.0, &set(&[18.0], 20.0), &SegmentConfig::default()).unwrap();
        assert_eq!(spans(&segs), vec![(0.0, 20.0)]);
    }

    #[test]
    fn cut_splits_long_equally() {
        let segs = cut_segments(70.0, &set(&[], 70.0), &SegmentConfig::default()).unwrap();
        assert_eq!(segs.len(), 3);
        for (s, (a, b)) in segs
            .iter()
            .zip([(0.0, 70.0 / 3.0), (70.0 / 3.0, 140.0 / 3.0), (140.0 / 3.0, 70.0)])
        {
            assert!((s.start - a).abs() < 1e-9 && (s.end - b).abs() < 1e-9);
        }
    }

    #[test]
    fn short_song_single_segment() {
        let segs = cut_segments(2.5, &set(&[], 2.5), &SegmentConfig::default()).unwrap();
        assert_eq!(spans(&segs), vec![(0.0, 2.5)]);
    }

    #[test]
    fn bad_config() {
        let cfg = SegmentConfig {
            min_segment_seconds: 10.0,
            max_segment_seconds: 5.0,
            ..Default::default()
        };
        assert!(cut_segments(10.0, &set(&[], 10.0), &cfg).is_err());
    }

    #[test]
    fn non_music_flag() {
        let seg = Segment {
            song_id: "x".into(),
            index: 0,
            start: 0.0,
            end: 10.0,
            snapped: false,
        };
        let m = |a, b| Window::new(a, b, WindowLabel::Music).unwrap();
        assert!(is_non_music(&seg, &[m(9.5, 20.0)]));
        assert!(!is_non_music(&seg, &[m(8.0, 20.0)]));
        assert!(is_non_music(&seg, &[]));
    }

    #[test]
    fn snapped_marking() {
        let raw = set(&[10.0, 30.0], 60.0);
        let snapped = snap_boundaries(&raw, &[9.0], 2.0).unwrap();
        let mut segs = cut_segments(60.0, &snapped, &SegmentConfig::default()).unwrap();
        mark_snapped(&mut segs, &raw, &snapped);
        assert_eq!(
            segs.iter().map(|s| s.snapped).collect::<Vec<_>>(),
            vec![false, true, false]
        );
    }
}
