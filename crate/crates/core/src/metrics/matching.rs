use std::cmp::Ordering;

use crate::geometry::{iou, Detection, GroundTruthInstance};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub det: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    pub matched_pairs: Vec<MatchedPair>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

/// Detection indices in processing order: descending confidence, ties by
/// ascending index.
pub(crate) fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence()
            .total_cmp(&dets[a].confidence())
            .then(a.cmp(&b))
    });
    order
}

/// Greedy one-to-one matching of detections to ground truth.
///
/// Detections are visited by descending confidence; each claims the still
/// unmatched gt with the highest IoU that is `>= iou_threshold` (ties go to
/// the lower gt index). With `class_aware`, only equal-class pairs qualify.
/// Pairs are reported in processing order; unmatched index lists ascend.
pub fn greedy_match(
    dets: &[Detection],
    gts: &[GroundTruthInstance],
    iou_threshold: f64,
    class_aware: bool,
) -> MatchResult {
    let mut gt_taken = vec![false; gts.len()];
    let mut det_taken = vec![false; dets.len()];
    let mut pairs = Vec::new();

    for d in confidence_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_taken[g] || (class_aware && gt.class_id != dets[d].class_id) {
                continue;
            }
            let v = iou(&dets[d].bbox, &gt.bbox);
            if v < iou_threshold {
                continue;
            }
            match best {
                Some((_, bv)) if v.partial_cmp(&bv) != Some(Ordering::Greater) => {}
                _ => best = Some((g, v)),
            }
        }
        if let Some((g, v)) = best {
            gt_taken[g] = true;
            det_taken[d] = true;
            pairs.push(MatchedPair { det: d, gt: g, iou: v });
        }
    }

    MatchResult {
        matched_pairs: pairs,
        unmatched_detections: (0..dets.len()).filter(|&d| !det_taken[d]).collect(),
        unmatched_gts: (0..gts.len()).filter(|&g| !gt_taken[g]).collect(),
    }
}

/// Fraction of ground-truth instances recovered by greedy matching; `1.0`
/// for an image without ground truth.
pub fn image_recall(
    dets: &[Detection],
    gts: &[GroundTruthInstance],
    iou_threshold: f64,
    class_aware: bool,
) -> f64 {
    if gts.is_empty() {
        return 1.0;
    }
    let m = greedy_match(dets, gts, iou_threshold, class_aware);
    m.matched_pairs.len() as f64 / gts.len() as f64
}
