//! Zero-shot classification: cosine logits against class anchors, scaled
//! softmax, argmax.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, EmbeddingError, Encoder, Modality};

/// Default class file: the six DJ-tool classes with their short descriptions.
pub const DEFAULT_CLASSES_JSON: &str = include_str!("../data/default_classes.json");

pub const DEFAULT_LOGIT_SCALE: f64 = 100.0;

/// Anchors whose mean has a smaller norm than this cannot be normalised.
const DEGENERATE_NORM: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("class {class_id}: prompt embeddings cancel out (degenerate anchor)")]
    DegenerateAnchor { class_id: String },
    #[error("dimension mismatch: embedding has {got}, anchors have {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("logit scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("need at least 2 logits/classes, got {0}")]
    TooFewClasses(usize),
    #[error("expected an audio embedding")]
    WrongModality,
    #[error("invalid class config: {0}")]
    InvalidConfig(String),
    #[error("class {class_id}: {source}")]
    Embedding {
        class_id: String,
        #[source]
        source: EmbeddingError,
    },
    #[error("class config: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ClassifierError {
    /// Class the error is attributed to, when there is one.
    pub fn class_id(&self) -> Option<&str> {
        match self {
            ClassifierError::DegenerateAnchor { class_id } | ClassifierError::Embedding { class_id, .. } => {
                Some(class_id)
            }
            _ => None,
        }
    }
}

/// Text description of one DJ-tool class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub id: String,
    pub display_name: String,
    pub prompts: Vec<String>,
}

fn default_scale() -> f64 {
    DEFAULT_LOGIT_SCALE
}

/// On-disk class configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    #[serde(default = "default_scale")]
    pub logit_scale: f64,
    pub classes: Vec<ClassSpec>,
}

impl Default for ClassConfig {
    fn default() -> Self {
        Self::from_json(DEFAULT_CLASSES_JSON).expect("bundled class file is valid")
    }
}

impl ClassConfig {
    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let cfg: ClassConfig = serde_json::from_str(text).map_err(|e| ClassifierError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("class config serialises")
    }

    /// Structural checks that need no encoder.
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(ClassifierError::InvalidScale(self.logit_scale));
        }
        if self.classes.len() < 2 {
            return Err(ClassifierError::TooFewClasses(self.classes.len()));
        }
        let mut seen = HashSet::new();
        for c in &self.classes {
            if c.id.is_empty()
                || !c
                    .id
                    .chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-')
            {
                return Err(ClassifierError::InvalidConfig(format!(
                    "class id {:?} is not a slug",
                    c.id
                )));
            }
            if !seen.insert(c.id.as_str()) {
                return Err(ClassifierError::InvalidConfig(format!("duplicate class id {}", c.id)));
            }
            if c.prompts.is_empty() || c.prompts.iter().any(|p| p.trim().is_empty()) {
                return Err(ClassifierError::InvalidConfig(format!(
                    "class {} has an empty prompt list or prompt",
                    c.id
                )));
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.id.clone()).collect()
    }
}

/// A class with its text anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolClass {
    pub spec: ClassSpec,
    pub anchor: Embedding,
}

/// M >= 2 anchored classes plus the softmax temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSet {
    classes: Vec<ToolClass>,
    logit_scale: f64,
}

impl ClassSet {
    pub fn new(classes: Vec<ToolClass>, logit_scale: f64) -> Result<Self, ClassifierError> {
        if !(logit_scale.is_finite() && logit_scale > 0.0) {
            return Err(ClassifierError::InvalidScale(logit_scale));
        }
        if classes.len() < 2 {
            return Err(ClassifierError::TooFewClasses(classes.len()));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if !seen.insert(c.spec.id.clone()) {
                return Err(ClassifierError::InvalidConfig(format!(
                    "duplicate class id {}",
                    c.spec.id
                )));
            }
        }
        let dim = classes[0].anchor.dim();
        if let Some(c) = classes.iter().find(|c| c.anchor.dim() != dim) {
            return Err(ClassifierError::DimMismatch {
                expected: dim,
                got: c.anchor.dim(),
            });
        }
        Ok(Self { classes, logit_scale })
    }

    /// Embeds every class's prompts and builds the set. Fails on the first bad class.
    pub fn build(config: &ClassConfig, encoder: &Encoder) -> Result<Self, ClassifierError> {
        config.validate()?;
        let classes = config
            .classes
            .iter()
            .map(|spec| {
                Ok(ToolClass {
                    spec: spec.clone(),
                    anchor: class_anchor(encoder, spec)?,
                })
            })
            .collect::<Result<Vec<_>, ClassifierError>>()?;
        Self::new(classes, config.logit_scale)
    }

    /// Like [`ClassSet::build`] but reports every failing class.
    pub fn build_all_errors(config: &ClassConfig, encoder: &Encoder) -> Result<Self, Vec<ClassifierError>> {
        config.validate().map_err(|e| vec![e])?;
        let mut classes = Vec::new();
        let mut errors = Vec::new();
        for spec in &config.classes {
            match class_anchor(encoder, spec) {
                Ok(anchor) => classes.push(ToolClass {
                    spec: spec.clone(),
                    anchor,
                }),
                Err(e) => errors.push(e),
            }
        }
        if !errors.is_empty() {
            return Err(errors);
        }
        Self::new(classes, config.logit_scale).map_err(|e| vec![e])
    }

    pub fn classes(&self) -> &[ToolClass] {
        &self.classes
    }

    pub fn logit_scale(&self) -> f64 {
        self.logit_scale
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.spec.id.clone()).collect()
    }

    pub fn dim(&self) -> usize {
        self.classes[0].anchor.dim()
    }

    pub fn config(&self) -> ClassConfig {
        ClassConfig {
            logit_scale: self.logit_scale,
            classes: self.classes.iter().map(|c| c.spec.clone()).collect(),
        }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.spec.id == id)
    }
}

/// Mean of unit embeddings, renormalised.
pub fn anchor_from_embeddings(class_id: &str, embeddings: &[Embedding]) -> Result<Embedding, ClassifierError> {
    let first = embeddings.first().ok_or_else(|| ClassifierError::DegenerateAnchor {
        class_id: class_id.to_string(),
    })?;
    if embeddings.len() == 1 {
        return Ok(first.clone().with_kind(Modality::Text));
    }
    let dim = first.dim();
    let mut mean = vec![0.0f64; dim];
    for e in embeddings {
        if e.dim() != dim {
            return Err(ClassifierError::DimMismatch {
                expected: dim,
                got: e.dim(),
            });
        }
        for (m, &v) in mean.iter_mut().zip(e.vector()) {
            *m += v as f64 / embeddings.len() as f64;
        }
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < DEGENERATE_NORM {
        return Err(ClassifierError::DegenerateAnchor {
            class_id: class_id.to_string(),
        });
    }
    Embedding::from_vector(mean.iter().map(|&v| v as f32).collect(), Modality::Text).map_err(|_| {
        ClassifierError::DegenerateAnchor {
            class_id: class_id.to_string(),
        }
    })
}

/// Text anchor of a class: its single prompt's embedding, or the normalised
/// mean over several prompts.
pub fn class_anchor(encoder: &Encoder, spec: &ClassSpec) -> Result<Embedding, ClassifierError> {
    let embeddings = spec
        .prompts
        .iter()
        .map(|p| encoder.embed_text(p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| ClassifierError::Embedding {
            class_id: spec.id.clone(),
            source,
        })?;
    anchor_from_embeddings(&spec.id, &embeddings)
}

/// Signed cosine between the audio embedding and each anchor.
pub fn similarity_logits(audio: &Embedding, cs: &ClassSet) -> Result<Vec<f64>, ClassifierError> {
    if audio.kind() != Modality::Audio {
        return Err(ClassifierError::WrongModality);
    }
    if audio.dim() != cs.dim() {
        return Err(ClassifierError::DimMismatch {
            expected: cs.dim(),
            got: audio.dim(),
        });
    }
    Ok(cs.classes.iter().map(|c| audio.dot(&c.anchor)).collect())
}

/// Softmax of `scale * logits`, computed with max subtraction.
pub fn softmax_probs(logits: &[f64], logit_scale: f64) -> Result<Vec<f64>, ClassifierError> {
    if !(logit_scale.is_finite() && logit_scale > 0.0) {
        return Err(ClassifierError::InvalidScale(logit_scale));
    }
    if logits.len() < 2 {
        return Err(ClassifierError::TooFewClasses(logits.len()));
    }
    let scaled: Vec<f64> = logits.iter().map(|d| d * logit_scale).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Classification {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub predicted: String,
    pub class_ids: Vec<String>,
}

impl Classification {
    pub fn prob_of(&self, class_id: &str) -> Option<f64> {
        self.class_ids.iter().position(|c| c == class_id).map(|i| self.probs[i])
    }

    pub fn predicted_prob(&self) -> f64 {
        self.prob_of(&self.predicted).unwrap_or(0.0)
    }
}

pub fn classify(audio: &Embedding, cs: &ClassSet) -> Result<Classification, ClassifierError> {
    let logits = similarity_logits(audio, cs)?;
    let probs = softmax_probs(&logits, cs.logit_scale)?;
    let best = argmax(&probs);
    Ok(Classification {
        predicted: cs.classes[best].spec.id.clone(),
        class_ids: cs.ids(),
        logits,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::MockBackend;
    use std::sync::Arc;

    fn text(v: Vec<f32>) -> Embedding {
        Embedding::from_vector(v, Modality::Text).unwrap()
    }

    fn audio(v: Vec<f32>) -> Embedding {
        Embedding::from_vector(v, Modality::Audio).unwrap()
    }

    fn class(id: &str, anchor: Embedding) -> ToolClass {
        ToolClass {
            spec: ClassSpec {
                id: id.into(),
                display_name: id.into(),
                prompts: vec![id.into()],
            },
            anchor,
        }
    }

    fn basis(dim: usize, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn default_config_has_six_classes() {
        let cfg = ClassConfig::default();
        assert_eq!(cfg.classes.len(), 6);
        assert_eq!(cfg.logit_scale, 100.0);
        assert!(cfg.ids().contains(&"drum_breaks".to_string()));
    }

    #[test]
    fn anchor_rules() {
        let enc = Encoder::new(Arc::new(MockBackend::new()));
        let one = ClassSpec {
            id: "a".into(),
            display_name: "A".into(),
            prompts: vec!["drum beat".into()],
        };
        let single = class_anchor(&enc, &one).unwrap();
        assert_eq!(single.vector(), enc.embed_text("drum beat").unwrap().vector());
        let twice = ClassSpec {
            prompts: vec!["drum beat".into(), "drum beat".into()],
            ..one.clone()
        };
        let doubled = class_anchor(&enc, &twice).unwrap();
        assert!(single.dot(&doubled) > 1.0 - 1e-6);

        let up = text(vec![0.0, 1.0]);
        let down = text(vec![0.0, -1.0]);
        assert!(matches!(
            anchor_from_embeddings("x", &[up, down]),
            Err(ClassifierError::DegenerateAnchor { class_id }) if class_id == "x"
        ));
    }

    #[test]
    fn logits_are_dot_products() {
        let cs = ClassSet::new(
            vec![class("a", text(vec![1.0, 0.0])), class("b", text(vec![0.0, 1.0]))],
            1.0,
        )
        .unwrap();
        let l = similarity_logits(&audio(vec![1.0, 0.0]), &cs).unwrap();
        assert_eq!(l, vec![1.0, 0.0]);
        let l = similarity_logits(&audio(vec![0.6, 0.8]), &cs).unwrap();
        assert!((l[0] - 0.6).abs() < 1e-7);
        assert!(matches!(
            similarity_logits(&audio(vec![1.0, 0.0, 0.0]), &cs),
            Err(ClassifierError::DimMismatch { .. })
        ));
        assert!(matches!(
            similarity_logits(&text(vec![1.0, 0.0]), &cs),
            Err(ClassifierError::WrongModality)
        ));
    }

    #[test]
    fn softmax_closed_forms() {
        assert_eq!(softmax_probs(&[0.0, 0.0], 37.0).unwrap(), vec![0.5, 0.5]);
        let e = std::f64::consts::E;
        let p = softmax_probs(&[1.0, 0.0], 1.0).unwrap();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[0] - 0.7311).abs() < 1e-4 && (p[1] - 0.2689).abs() < 1e-4);
        assert!(softmax_probs(&[0.9, 0.1], 100.0).unwrap()[0] > 0.999);
        assert!(matches!(
            softmax_probs(&[0.1, 0.2], 0.0),
            Err(ClassifierError::InvalidScale(_))
        ));
        assert!(matches!(
            softmax_probs(&[0.1], 1.0),
            Err(ClassifierError::TooFewClasses(1))
        ));
    }

    #[test]
    fn planted_geometry_classifies() {
        let dim = 8;
        let cs = ClassSet::new(
            vec![
                class("vocals", text(basis(dim, 0))),
                class("drums", text(basis(dim, 1))),
                class("fx", text(basis(dim, 2))),
            ],
            100.0,
        )
        .unwrap();
        let c = classify(&audio(basis(dim, 1)), &cs).unwrap();
        assert_eq!(c.predicted, "drums");
        assert!(c.predicted_prob() > 0.999);
    }

    #[test]
    fn identical_anchors_tie_to_first() {
        let cs = ClassSet::new(
            vec![
                class("first", text(vec![1.0, 1.0])),
                class("second", text(vec![1.0, 1.0])),
            ],
            100.0,
        )
        .unwrap();
        let c = classify(&audio(vec![0.3, 0.9]), &cs).unwrap();
        assert_eq!(c.predicted, "first");
    }

    #[test]
    fn config_validation() {
        let mut cfg = ClassConfig::default();
        cfg.classes[1].id = cfg.classes[0].id.clone();
        assert!(cfg.validate().is_err());
        let mut cfg = ClassConfig::default();
        cfg.classes.truncate(1);
        assert!(matches!(cfg.validate(), Err(ClassifierError::TooFewClasses(1))));
        let mut cfg = ClassConfig::default();
        cfg.classes[0].prompts.clear();
        assert!(cfg.validate().is_err());
        assert!(ClassConfig::from_json("{\"classes\": [], \"extra\": 1}").is_err());
    }
}
