//! Aggregate configuration for the per-song analysis pipeline.

use serde::{Deserialize, Serialize};

use crate::activity::ActivityConfig;
use crate::boundaries::BoundaryConfig;
use crate::features::FeatureConfig;
use crate::segmentation::SegmentConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub boundaries: BoundaryConfig,
    pub activity: ActivityConfig,
    pub segments: SegmentConfig,
    /// Flag segments with under 10% music-window overlap as `non_music`.
    pub flag_non_music: bool,
}
