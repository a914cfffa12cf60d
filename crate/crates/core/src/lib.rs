//! Zero-shot discovery of DJ tools in a music library.
//!
//! Songs are cut at structural boundaries (snapped to speech onsets), each
//! segment is embedded by an audio encoder, and the segment is classified
//! against text descriptions of DJ-tool classes by cosine similarity in a
//! shared audio/text embedding space. Results are collected into a
//! re-scorable [`catalog::Catalog`].

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod activity;
pub mod audio;
pub mod boundaries;
pub mod catalog;
pub mod classifier;
pub mod config;
pub mod embedding;
pub mod features;
pub mod segmentation;

pub use activity::{ActivityConfig, ActivityTimeline, Window, WindowLabel};
pub use audio::AudioBuffer;
pub use boundaries::{BoundaryConfig, BoundarySet, BoundarySource};
pub use catalog::{Catalog, CatalogError, SegmentRecord, SongRecord};
pub use classifier::{ClassConfig, ClassSet, ClassSpec, Classification};
pub use config::PipelineConfig;
pub use embedding::{Embedding, Encoder, EncoderBackend, Modality};
pub use features::FeatureConfig;
pub use segmentation::{Segment, SegmentConfig};
