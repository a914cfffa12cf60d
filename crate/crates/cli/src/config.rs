//! Settings resolution. Each value comes from the first source that sets it:
//! command-line flag, `CRATEDIG_*` environment variable, `--config` TOML file,
//! built-in default.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::Context;
use serde::Deserialize;

use cratedig_core::embedding::{EmbeddingCache, EncoderBackend, MockAudioMode, MockBackend, PrecomputedBackend};
use cratedig_core::{ClassConfig, Encoder, PipelineConfig};

/// A bad invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Mock(MockAudioMode),
    Precomputed(PathBuf),
    Model { audio: PathBuf, text: PathBuf },
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        match (kind, arg) {
            ("mock", None) => Ok(Self::Mock(MockAudioMode::ContentHash)),
            ("mock", Some("pitch")) => Ok(Self::Mock(MockAudioMode::DominantPitch { resolution_hz: 10.0 })),
            ("mock", Some("constant")) => Ok(Self::Mock(MockAudioMode::Constant("constant".into()))),
            ("precomputed", Some(dir)) if !dir.is_empty() => Ok(Self::Precomputed(dir.into())),
            ("model", Some(paths)) => match paths.split_once(',') {
                Some((a, t)) if !a.is_empty() && !t.is_empty() => Ok(Self::Model {
                    audio: a.into(),
                    text: t.into(),
                }),
                _ => Err("model backend takes <audio_model>,<text_model>".into()),
            },
            _ => Err(format!(
                "unknown backend {s:?}; expected mock, mock:pitch, mock:constant, precomputed:<dir> or model:<audio>,<text>"
            )),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub dim: usize,
    pub sample_rate: u32,
    pub chunk_seconds: f64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            dim: 512,
            sample_rate: 48_000,
            chunk_seconds: 10.0,
        }
    }
}

/// Shape of the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<String>,
    pub classes: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub encoder: EncoderSettings,
    pub pipeline: PipelineConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(v) = p.as_mut().filter(|v| v.is_relative()) {
                *v = base.join(&*v);
            }
        };
        rebase(&mut cfg.classes);
        rebase(&mut cfg.cache_dir);
        Ok(cfg)
    }
}

/// Flag-or-environment values, before merging with the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub backend: Option<String>,
    pub classes: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct CliConfig {
    pub backend: BackendSpec,
    pub classes: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub workers: usize,
    pub encoder: EncoderSettings,
    pub pipeline: PipelineConfig,
}

impl CliConfig {
    pub fn resolve(o: Overrides) -> anyhow::Result<Self> {
        let file = match &o.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let backend_text = o.backend.or(file.backend).unwrap_or_else(|| "mock".into());
        let backend: BackendSpec = backend_text.parse().map_err(usage)?;
        let workers = o
            .workers
            .or(file.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if workers == 0 {
            return Err(usage("workers must be at least 1"));
        }
        let cfg = Self {
            backend,
            classes: o.classes.or(file.classes),
            cache_dir: o.cache_dir.or(file.cache_dir),
            workers,
            encoder: file.encoder,
            pipeline: file.pipeline,
        };
        cfg.check_files()?;
        Ok(cfg)
    }

    fn check_files(&self) -> anyhow::Result<()> {
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(usage(format!("{what} {} does not exist", p.display())))
            }
        };
        match &self.backend {
            BackendSpec::Mock(_) => {}
            BackendSpec::Precomputed(dir) => must_exist(dir, "precomputed embedding directory")?,
            BackendSpec::Model { audio, text } => {
                must_exist(audio, "audio model")?;
                must_exist(text, "text model")?;
            }
        }
        if let Some(c) = &self.classes {
            must_exist(c, "class config")?;
        }
        let p = &self.pipeline;
        let checks = [
            p.features.validate().map_err(|e| e.to_string()),
            p.boundaries.validate().map_err(|e| e.to_string()),
            p.activity.validate().map_err(|e| e.to_string()),
            p.segments.validate().map_err(|e| e.to_string()),
        ];
        for c in checks {
            c.map_err(|e| usage(format!("pipeline config: {e}")))?;
        }
        Ok(())
    }

    pub fn class_config(&self) -> anyhow::Result<ClassConfig> {
        match &self.classes {
            Some(p) => ClassConfig::load(p).map_err(|e| usage(format!("class config {}: {e}", p.display()))),
            None => Ok(ClassConfig::default()),
        }
    }

    fn backend(&self) -> anyhow::Result<Arc<dyn EncoderBackend>> {
        Ok(match &self.backend {
            BackendSpec::Mock(mode) => Arc::new(MockBackend::new().with_audio_mode(mode.clone())),
            BackendSpec::Precomputed(dir) => Arc::new(PrecomputedBackend::new(dir, self.encoder.dim)?),
            BackendSpec::Model { audio, text } => self.model_backend(audio, text)?,
        })
    }

    #[cfg(feature = "onnx")]
    fn model_backend(&self, audio: &Path, text: &Path) -> anyhow::Result<Arc<dyn EncoderBackend>> {
        let e = &self.encoder;
        let backend = cratedig_core::embedding::OnnxBackend::load(audio, text, e.sample_rate, e.chunk_seconds, e.dim)?;
        Ok(Arc::new(backend))
    }

    #[cfg(not(feature = "onnx"))]
    fn model_backend(&self, _audio: &Path, _text: &Path) -> anyhow::Result<Arc<dyn EncoderBackend>> {
        Err(usage("model backend needs a build with the `onnx` feature"))
    }

    /// Encoder with the cache attached. `default_cache` applies when no cache
    /// directory was configured.
    pub fn encoder(&self, default_cache: Option<&Path>) -> anyhow::Result<Encoder> {
        let encoder = Encoder::new(self.backend()?);
        let Some(dir) = self.cache_dir.as_deref().or(default_cache) else {
            return Ok(encoder);
        };
        let cache = EmbeddingCache::open(dir).with_context(|| format!("opening cache {}", dir.display()))?;
        Ok(encoder.with_cache(cache))
    }
}

/// Cache directory used when none is configured: next to the catalog.
pub fn default_cache_for(catalog: &Path) -> PathBuf {
    catalog
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .join(".cratedig-cache")
}
