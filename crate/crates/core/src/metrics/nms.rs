use crate::geometry::{iou, Detection};

use super::matching::confidence_order;

/// Per-class greedy non-maximum suppression.
///
/// A box is dropped when it overlaps an already kept box of the same class
/// with IoU strictly greater than `iou_threshold`. The result is ordered by
/// descending confidence, ties by input position.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::with_capacity(dets.len());
    for idx in confidence_order(dets) {
        let cand = &dets[idx];
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == cand.class_id && iou(&k.bbox, &cand.bbox) > iou_threshold);
        if !suppressed {
            kept.push(*cand);
        }
    }
    kept
}
