//! Pretrained audio/text encoder pair exported to ONNX.
//!
//! Expected graphs:
//! - audio: one input `[1, N]` float32 mono PCM at the model rate, first output `[1, D]`;
//! - text: inputs `input_ids` and `attention_mask`, both `[1, L]` int64, first output `[1, D]`.
//!
//! Text is tokenised with the `tokenizer.json` found next to the text model.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use tokenizers::Tokenizer;
use tract_onnx::prelude::*;

use super::{EmbeddingError, EncoderBackend, Modality};
use crate::audio::AudioBuffer;

type Plan = Arc<TypedRunnableModel>;

pub struct OnnxBackend {
    audio: Plan,
    text: Plan,
    tokenizer: Tokenizer,
    sample_rate: u32,
    chunk_seconds: f64,
    dim: usize,
    version: String,
}

fn failure(context: &str, e: impl std::fmt::Display) -> EmbeddingError {
    EmbeddingError::BackendFailure(format!("{context}: {e}"))
}

impl OnnxBackend {
    /// Loads both graphs. `sample_rate` and `chunk_seconds` describe the audio
    /// encoder's fixed input (48 kHz and 10 s for the reference export).
    pub fn load(
        audio_model: &Path,
        text_model: &Path,
        sample_rate: u32,
        chunk_seconds: f64,
        dim: usize,
    ) -> Result<Self, EmbeddingError> {
        for p in [audio_model, text_model] {
            if !p.is_file() {
                return Err(failure("model file missing", p.display()));
            }
        }
        let tokenizer_path: PathBuf = text_model
            .parent()
            .map(|d| d.join("tokenizer.json"))
            .unwrap_or_else(|| PathBuf::from("tokenizer.json"));
        let tokenizer = Tokenizer::from_file(&tokenizer_path).map_err(|e| failure("tokenizer", e))?;

        let chunk = (chunk_seconds * sample_rate as f64).round() as usize;
        let audio = tract_onnx::onnx()
            .model_for_path(audio_model)
            .and_then(|m| m.with_input_fact(0, f32::fact([1, chunk]).into()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| failure("audio model", e))?;
        let text = tract_onnx::onnx()
            .model_for_path(text_model)
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| failure("text model", e))?;
        let version = format!(
            "{}+{}",
            audio_model.file_name().and_then(|s| s.to_str()).unwrap_or("audio"),
            text_model.file_name().and_then(|s| s.to_str()).unwrap_or("text")
        );
        Ok(Self {
            audio,
            text,
            tokenizer,
            sample_rate,
            chunk_seconds,
            dim,
            version,
        })
    }

    fn first_output(outputs: TVec<TValue>) -> Result<Vec<f32>, EmbeddingError> {
        let out = outputs
            .into_iter()
            .next()
            .ok_or_else(|| failure("model", "no outputs"))?;
        let view = out.to_plain_array_view::<f32>().map_err(|e| failure("output", e))?;
        Ok(view.iter().copied().collect())
    }
}

impl EncoderBackend for OnnxBackend {
    fn name(&self) -> &str {
        "onnx"
    }

    fn version(&self) -> &str {
        &self.version
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn supports(&self, _modality: Modality) -> bool {
        true
    }

    fn sample_rate(&self) -> Option<u32> {
        Some(self.sample_rate)
    }

    fn max_audio_seconds(&self) -> Option<f64> {
        Some(self.chunk_seconds)
    }

    fn encode_audio(&self, buf: &AudioBuffer) -> Result<Vec<f32>, EmbeddingError> {
        let chunk = (self.chunk_seconds * self.sample_rate as f64).round() as usize;
        let mut samples = buf.samples().to_vec();
        samples.resize(chunk, 0.0);
        let input =
            tract_ndarray::Array2::from_shape_vec((1, chunk), samples).map_err(|e| failure("audio input", e))?;
        let outputs = self
            .audio
            .run(tvec!(Tensor::from(input).into()))
            .map_err(|e| failure("audio inference", e))?;
        Self::first_output(outputs)
    }

    fn encode_text(&self, prompt: &str) -> Result<Vec<f32>, EmbeddingError> {
        let enc = self
            .tokenizer
            .encode(prompt, true)
            .map_err(|e| failure("tokenize", e))?;
        let ids: Vec<i64> = enc.get_ids().iter().map(|&i| i as i64).collect();
        let mask: Vec<i64> = enc.get_attention_mask().iter().map(|&i| i as i64).collect();
        let len = ids.len();
        let ids = tract_ndarray::Array2::from_shape_vec((1, len), ids).map_err(|e| failure("text input", e))?;
        let mask = tract_ndarray::Array2::from_shape_vec((1, len), mask).map_err(|e| failure("text input", e))?;
        let outputs = self
            .text
            .run(tvec!(Tensor::from(ids).into(), Tensor::from(mask).into()))
            .map_err(|e| failure("text inference", e))?;
        Self::first_output(outputs)
    }
}
