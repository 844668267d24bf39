//! Post-processing of teacher pseudo-labels: confidence and mask/box
//! consistency filtering, first-pass agreement against reviewed labels, and
//! YOLO / COCO label conversion.

mod agreement;
mod convert;

pub use agreement::{agreement_report, EditKind, FlaggedFrame, FrameEdit, FrameSet, ReviewReport, EDIT_TOLERANCE_PX};
pub use convert::{
    convert_labels, from_coco, from_yolo_dir, parse_yolo_line, read_coco_results, relative_diff, to_coco, to_yolo,
    write_yolo_dir, yolo_line, CocoDocument, Direction, LabelSet, LabeledImage,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, mask_bounds, BBox, GroundTruthInstance, Polygon};

/// One teacher output: an instance mask, its reported box and a score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherPrediction {
    pub image_id: String,
    pub mask: Polygon,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub confidence: f64,
    #[serde(rename = "class")]
    pub class_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationConfig {
    pub conf_threshold: f64,
    pub mask_box_iou: f64,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        Self {
            conf_threshold: 0.75,
            mask_box_iou: 0.5,
        }
    }
}

impl AnnotationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("conf_threshold", self.conf_threshold), ("mask_box_iou", self.mask_box_iou)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} = {v} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    LowConfidence { confidence: f64, threshold: f64 },
    MaskBoxMismatch { iou: f64, threshold: f64 },
    DegenerateMask { detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub prediction: TeacherPrediction,
    #[serde(flatten)]
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub accepted: Vec<TeacherPrediction>,
    pub rejected: Vec<Rejection>,
}

fn check(p: &TeacherPrediction, cfg: &AnnotationConfig) -> Option<RejectReason> {
    if !(p.confidence >= cfg.conf_threshold) {
        return Some(RejectReason::LowConfidence {
            confidence: p.confidence,
            threshold: cfg.conf_threshold,
        });
    }
    match mask_bounds(&p.mask) {
        Err(e) => Some(RejectReason::DegenerateMask { detail: e.to_string() }),
        Ok(bounds) => {
            let v = iou(&bounds, &p.bbox);
            (v < cfg.mask_box_iou).then_some(RejectReason::MaskBoxMismatch {
                iou: v,
                threshold: cfg.mask_box_iou,
            })
        }
    }
}

/// Keeps predictions with `confidence >= conf_threshold` whose mask bounds
/// overlap the reported box with IoU `>= mask_box_iou`.
pub fn filter_teacher(preds: &[TeacherPrediction], cfg: &AnnotationConfig) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for p in preds {
        match check(p, cfg) {
            None => out.accepted.push(p.clone()),
            Some(reason) => out.rejected.push(Rejection {
                prediction: p.clone(),
                reason,
            }),
        }
    }
    out
}

/// Parses a JSON-lines file of teacher predictions; blank lines are skipped.
pub fn read_teacher_jsonl(text: &str) -> Result<Vec<TeacherPrediction>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: TeacherPrediction =
            serde_json::from_str(line).map_err(|e| Error::Parse(format!("teacher line {}: {e}", n + 1)))?;
        if !(0.0..=1.0).contains(&p.confidence) {
            return Err(Error::Parse(format!(
                "teacher line {}: confidence {} outside [0, 1]",
                n + 1,
                p.confidence
            )));
        }
        out.push(p);
    }
    Ok(out)
}

/// Groups accepted predictions into per-frame label sets over `frame_ids`.
/// Frames without predictions get an empty set.
pub fn frames_from_teacher(
    accepted: &[TeacherPrediction],
    classes: &[String],
    frame_ids: impl IntoIterator<Item = String>,
) -> Result<FrameSet> {
    let mut frames: FrameSet = frame_ids.into_iter().map(|id| (id, Vec::new())).collect();
    for p in accepted {
        let class_id = classes
            .iter()
            .position(|c| *c == p.class_name)
            .ok_or_else(|| Error::Parse(format!("teacher class `{}` is not a known class", p.class_name)))?;
        let slot = frames.get_mut(&p.image_id).ok_or_else(|| {
            Error::FrameMismatch(format!("teacher frame `{}` is not in the reviewed set", p.image_id))
        })?;
        slot.push(GroundTruthInstance::new(p.bbox, class_id as u32));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(conf: f64, mask: Polygon, b: [f64; 4]) -> TeacherPrediction {
        TeacherPrediction {
            image_id: "f1".into(),
            mask,
            bbox: BBox::try_from(b).unwrap(),
            confidence: conf,
            class_name: "drone".into(),
        }
    }

    fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
        vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    }

    #[test]
    fn gates() {
        let cfg = AnnotationConfig::default();
        let good = pred(0.9, square(0.0, 0.0, 10.0, 10.0), [0.0, 0.0, 10.0, 10.0]);
        let low = pred(0.74, square(0.0, 0.0, 10.0, 10.0), [0.0, 0.0, 10.0, 10.0]);
        // mask bounds (0,0,10,3) vs box (0,0,10,10): IoU 0.3
        let off = pred(0.9, square(0.0, 0.0, 10.0, 3.0), [0.0, 0.0, 10.0, 10.0]);
        let flat = pred(0.9, vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], [0.0, 0.0, 10.0, 10.0]);
        let edge = pred(0.75, square(0.0, 0.0, 10.0, 5.0), [0.0, 0.0, 10.0, 10.0]);
        let out = filter_teacher(&[good.clone(), low, off, flat, edge.clone()], &cfg);
        assert_eq!(out.accepted, vec![good, edge]);
        assert_eq!(out.rejected.len(), 3);
        assert!(matches!(out.rejected[0].reason, RejectReason::LowConfidence { confidence, .. } if confidence == 0.74));
        match out.rejected[1].reason {
            RejectReason::MaskBoxMismatch { iou, .. } => assert!((iou - 0.3).abs() < 1e-12),
            ref r => panic!("{r:?}"),
        }
        assert!(matches!(out.rejected[2].reason, RejectReason::DegenerateMask { .. }));
    }

    #[test]
    fn filtering_is_idempotent() {
        let cfg = AnnotationConfig::default();
        let preds: Vec<TeacherPrediction> = (0..20)
            .map(|k| {
                let c = 0.5 + 0.025 * k as f64;
                let h = 2.0 + k as f64 * 0.5;
                pred(c.min(1.0), square(0.0, 0.0, 10.0, h), [0.0, 0.0, 10.0, 10.0])
            })
            .collect();
        let once = filter_teacher(&preds, &cfg);
        let twice = filter_teacher(&once.accepted, &cfg);
        assert_eq!(twice.accepted, once.accepted);
        assert!(twice.rejected.is_empty());
    }

    #[test]
    fn rejection_reasons_serialize_with_tag() {
        let cfg = AnnotationConfig::default();
        let out = filter_teacher(&[pred(0.1, square(0.0, 0.0, 1.0, 1.0), [0.0, 0.0, 1.0, 1.0])], &cfg);
        let v = serde_json::to_value(&out.rejected[0]).unwrap();
        assert_eq!(v["reason"], "low_confidence");
        assert_eq!(v["threshold"], 0.75);
    }

    #[test]
    fn jsonl_parsing() {
        let text = "{\"image_id\":\"a\",\"mask\":[[0,0],[4,0],[0,4]],\"box\":[0,0,4,4],\"confidence\":0.8,\"class\":\"drone\"}\n\n";
        let v = read_teacher_jsonl(text).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].class_name, "drone");
        let bad = text.replace("0.8", "1.8");
        assert!(read_teacher_jsonl(&bad).is_err());
        assert!(read_teacher_jsonl("{").is_err());
    }

    #[test]
    fn frames_from_predictions() {
        let classes = vec!["vehicle".to_string(), "drone".to_string()];
        let p = pred(0.9, square(0.0, 0.0, 4.0, 4.0), [0.0, 0.0, 4.0, 4.0]);
        let f = frames_from_teacher(&[p.clone()], &classes, ["f1".to_string(), "f2".to_string()]).unwrap();
        assert_eq!(f["f1"].len(), 1);
        assert_eq!(f["f1"][0].class_id, 1);
        assert!(f["f2"].is_empty());
        assert!(frames_from_teacher(&[p], &classes, ["f9".to_string()]).is_err());
    }
}
