use serde::{Deserialize, Serialize};

use super::CatalogError;
use crate::audio::{self, AudioBuffer};
use crate::classifier::{classify, ClassSet};
use crate::embedding::Encoder;

/// Clip lengths (seconds) of the reference duration table.
pub const TABLE_DURATIONS: [f64; 5] = [23.0, 18.0, 13.0, 8.0, 3.0];

/// One segment trimmed to each duration, measured against a target class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub durations: Vec<f64>,
    /// Probability of the target class at each duration.
    pub target_probs: Vec<f64>,
    pub predicted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub target_class: String,
    pub durations: Vec<f64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Tab-separated table: one row per segment, one column per duration.
    pub fn render_table(&self) -> String {
        let mut out = String::from("segment");
        for d in &self.durations {
            out.push_str(&format!("\t{d}s"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.name);
            for p in &row.target_probs {
                out.push_str(&format!("\t{p:.2}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Classifies the first `d` seconds of `buf` for each `d` in `durations`
/// (positive, strictly decreasing) and records the target class probability.
pub fn ablate_duration(
    name: &str,
    buf: &AudioBuffer,
    durations: &[f64],
    classes: &ClassSet,
    target_class: &str,
    encoder: &Encoder,
) -> Result<AblationRow, CatalogError> {
    let target = classes
        .index_of(target_class)
        .ok_or_else(|| CatalogError::UnknownClass(target_class.to_string()))?;
    let descending = durations.windows(2).all(|w| w[0] > w[1]);
    if durations.is_empty() || !descending || durations.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(CatalogError::InvalidDurations);
    }
    let available = buf.duration_seconds();
    if durations[0] > available + 0.5 / buf.sample_rate() as f64 {
        return Err(CatalogError::DurationTooLong {
            duration: durations[0],
            available,
        });
    }
    let mut row = AblationRow {
        name: name.to_string(),
        durations: durations.to_vec(),
        target_probs: Vec::with_capacity(durations.len()),
        predicted: Vec::with_capacity(durations.len()),
    };
    for &d in durations {
        let clip = audio::slice(buf, 0.0, d.min(available))?;
        let (emb, _) = encoder.embed_audio_cached(&clip)?;
        let c = classify(&emb, classes)?;
        row.target_probs.push(c.probs[target]);
        row.predicted.push(c.predicted);
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ClassConfig;
    use crate::embedding::{MockAudioMode, MockBackend};
    use std::sync::Arc;

    fn tone(secs: f64) -> AudioBuffer {
        let sr = 8000;
        let n = (secs * sr as f64) as usize;
        AudioBuffer::new(
            (0..n)
                .map(|i| (2.0 * std::f32::consts::PI * 440.0 * i as f32 / sr as f32).sin() * 0.5)
                .collect(),
            sr,
        )
        .unwrap()
    }

    fn setup(mode: MockAudioMode) -> (Encoder, ClassSet) {
        let enc = Encoder::new(Arc::new(MockBackend::new().with_audio_mode(mode)));
        let cs = ClassSet::build(&ClassConfig::default(), &enc).unwrap();
        (enc, cs)
    }

    #[test]
    fn five_columns_and_constant_mode_is_flat() {
        let (enc, cs) = setup(MockAudioMode::Constant("same".into()));
        let row = ablate_duration("s1", &tone(24.0), &TABLE_DURATIONS, &cs, "drum_breaks", &enc).unwrap();
        assert_eq!(row.target_probs.len(), 5);
        assert!(row.target_probs.windows(2).all(|w| w[0] == w[1]));
        let report = AblationReport {
            target_class: "drum_breaks".into(),
            durations: TABLE_DURATIONS.to_vec(),
            rows: vec![row],
        };
        let table = report.render_table();
        assert!(table.starts_with("segment\t23s\t18s\t13s\t8s\t3s\n"));
        assert_eq!(table.lines().nth(1).unwrap().split('\t').count(), 6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (enc, cs) = setup(MockAudioMode::ContentHash);
        let buf = tone(10.0);
        assert!(matches!(
            ablate_duration("x", &buf, &[23.0, 3.0], &cs, "drum_breaks", &enc),
            Err(CatalogError::DurationTooLong { .. })
        ));
        assert!(matches!(
            ablate_duration("x", &buf, &[3.0, 8.0], &cs, "drum_breaks", &enc),
            Err(CatalogError::InvalidDurations)
        ));
        assert!(matches!(
            ablate_duration("x", &buf, &[8.0, 3.0], &cs, "nope", &enc),
            Err(CatalogError::UnknownClass(_))
        ));
    }
}
