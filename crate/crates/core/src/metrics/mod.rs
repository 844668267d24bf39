//! Detection metric kernels and continual-learning metrics.

mod ap;
mod continual;
mod matching;
mod nms;

pub use ap::{average_precision, map_50_95, map_at, IOU_THRESHOLDS_50_95, RECALL_POINTS};
pub use continual::{acc, bwt, EvalMatrix};
pub use matching::{greedy_match, image_recall, MatchResult, MatchedPair};
pub use nms::nms;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Detection;

/// Detections kept per image after NMS.
pub const MAX_DETECTIONS: usize = 100;

/// Post-processing and matching thresholds applied identically to every
/// detector backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub match_iou: f64,
    /// Whether recall matching requires equal classes.
    pub class_aware: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            conf_threshold: 0.25,
            nms_iou: 0.7,
            match_iou: 0.5,
            class_aware: true,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("conf_threshold", self.conf_threshold),
            ("nms_iou", self.nms_iou),
            ("match_iou", self.match_iou),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        Ok(())
    }

    /// Confidence filter, then per-class NMS, then the per-image cap.
    pub fn postprocess(&self, dets: &[Detection]) -> Vec<Detection> {
        let kept: Vec<Detection> = dets
            .iter()
            .filter(|d| d.confidence() >= self.conf_threshold)
            .copied()
            .collect();
        let mut out = nms(&kept, self.nms_iou);
        out.truncate(MAX_DETECTIONS);
        out
    }
}
