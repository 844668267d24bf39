//! COCO-style average precision: 101-point interpolation over a pooled,
//! confidence-ranked precision/recall curve.

use crate::geometry::{ClassId, Detection, GroundTruthInstance};

use super::matching::greedy_match;

/// Number of recall points on the interpolation grid `0.00, 0.01, ..., 1.00`.
pub const RECALL_POINTS: usize = 101;

/// `0.50, 0.55, ..., 0.95`, each computed as an exact quotient of integers.
pub const IOU_THRESHOLDS_50_95: [f64; 10] = [
    50.0 / 100.0,
    55.0 / 100.0,
    60.0 / 100.0,
    65.0 / 100.0,
    70.0 / 100.0,
    75.0 / 100.0,
    80.0 / 100.0,
    85.0 / 100.0,
    90.0 / 100.0,
    95.0 / 100.0,
];

/// Average precision of one class at one IoU threshold.
///
/// `dets[i]` and `gts[i]` belong to the same image. Returns `None` when the
/// class has no ground truth in any image, so that callers can exclude it
/// from averages instead of scoring it as zero.
pub fn average_precision(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthInstance>],
    class_id: ClassId,
    iou_threshold: f64,
) -> Option<f64> {
    debug_assert_eq!(dets.len(), gts.len());
    // (confidence, image, position, is_tp)
    let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
    let mut n_gt = 0usize;
    for (img, (img_dets, img_gts)) in dets.iter().zip(gts).enumerate() {
        let class_gts: Vec<GroundTruthInstance> = img_gts
            .iter()
            .filter(|g| g.class_id == class_id)
            .cloned()
            .collect();
        n_gt += class_gts.len();
        let class_dets: Vec<Detection> = img_dets
            .iter()
            .filter(|d| d.class_id == class_id)
            .copied()
            .collect();
        if class_dets.is_empty() {
            continue;
        }
        let m = greedy_match(&class_dets, &class_gts, iou_threshold, true);
        let mut tp = vec![false; class_dets.len()];
        for p in &m.matched_pairs {
            tp[p.det] = true;
        }
        for (pos, d) in class_dets.iter().enumerate() {
            ranked.push((d.confidence(), img, pos, tp[pos]));
        }
    }
    if n_gt == 0 {
        return None;
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, _, _, hit) in &ranked {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        if precision[k + 1] > precision[k] {
            precision[k] = precision[k + 1];
        }
    }

    let mut sum = 0.0;
    for step in 0..RECALL_POINTS {
        let r = step as f64 / 100.0;
        let first = recall.partition_point(|&rc| rc < r);
        if first < precision.len() {
            sum += precision[first];
        }
    }
    Some(sum / RECALL_POINTS as f64)
}

/// Mean AP at a single IoU threshold over the requested classes that have
/// ground truth. `None` when no requested class is evaluable.
pub fn map_at(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthInstance>],
    classes: &[ClassId],
    iou_threshold: f64,
) -> Option<f64> {
    let aps: Vec<f64> = classes
        .iter()
        .filter_map(|&c| average_precision(dets, gts, c, iou_threshold))
        .collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

/// mAP averaged over IoU thresholds 0.50:0.05:0.95 and over the requested
/// classes present in the ground truth.
pub fn map_50_95(
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruthInstance>],
    classes: &[ClassId],
) -> Option<f64> {
    let per_class: Vec<f64> = classes
        .iter()
        .filter_map(|&c| {
            let aps: Option<Vec<f64>> = IOU_THRESHOLDS_50_95
                .iter()
                .map(|&t| average_precision(dets, gts, c, t))
                .collect();
            aps.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    (!per_class.is_empty()).then(|| per_class.iter().sum::<f64>() / per_class.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{iou, BBox};

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn thresholds_are_exact() {
        assert_eq!(IOU_THRESHOLDS_50_95[0], 0.5);
        assert_eq!(IOU_THRESHOLDS_50_95[2], 0.6);
        assert_eq!(IOU_THRESHOLDS_50_95[9], 0.95);
    }

    #[test]
    fn perfect_and_empty() {
        let b = bb(0.0, 0.0, 10.0, 10.0);
        let gts = vec![vec![GroundTruthInstance::new(b, 0)]];
        let perfect = vec![vec![Detection::new(b, 0, 0.9).unwrap()]];
        assert_eq!(average_precision(&perfect, &gts, 0, 0.5), Some(1.0));
        assert_eq!(average_precision(&[vec![]], &gts, 0, 0.5), Some(0.0));
        assert_eq!(map_50_95(&perfect, &gts, &[0]), Some(1.0));
    }

    #[test]
    fn tp_fp_tp_sequence() {
        // Two gts; ranked TP, FP, TP. Hand-built curve:
        // recall 0.5,0.5,1.0; precision 1, 1/2, 2/3 -> interpolated 1, 2/3, 2/3.
        // Grid points r<=0.5 (51 points) get 1, r in (0.5,1] (50 points) get 2/3.
        let g1 = bb(0.0, 0.0, 10.0, 10.0);
        let g2 = bb(100.0, 100.0, 110.0, 110.0);
        let gts = vec![vec![GroundTruthInstance::new(g1, 0), GroundTruthInstance::new(g2, 0)]];
        let dets = vec![vec![
            Detection::new(g1, 0, 0.9).unwrap(),
            Detection::new(bb(50.0, 50.0, 60.0, 60.0), 0, 0.8).unwrap(),
            Detection::new(g2, 0, 0.7).unwrap(),
        ]];
        let expected = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        let ap = average_precision(&dets, &gts, 0, 0.5).unwrap();
        assert!((ap - expected).abs() < 1e-12, "{ap} vs {expected}");
    }

    #[test]
    fn iou_point_six_gives_three_tenths() {
        let gt = bb(0.0, 0.0, 10.0, 10.0);
        let d = bb(0.0, 0.0, 10.0, 6.0);
        assert_eq!(iou(&gt, &d), 0.6);
        let v = map_50_95(
            &[vec![Detection::new(d, 0, 0.9).unwrap()]],
            &[vec![GroundTruthInstance::new(gt, 0)]],
            &[0],
        )
        .unwrap();
        assert!((v - 0.3).abs() < 1e-12, "{v}");
    }

    #[test]
    fn no_evaluable_class() {
        let b = bb(0.0, 0.0, 10.0, 10.0);
        let gts = vec![vec![GroundTruthInstance::new(b, 0)]];
        assert_eq!(map_50_95(&[vec![]], &gts, &[1, 2]), None);
        assert_eq!(average_precision(&[vec![]], &gts, 3, 0.5), None);
    }

    #[test]
    fn absent_classes_are_excluded_from_mean() {
        let b = bb(0.0, 0.0, 10.0, 10.0);
        let gts = vec![vec![GroundTruthInstance::new(b, 0)]];
        let dets = vec![vec![Detection::new(b, 0, 0.9).unwrap(), Detection::new(b, 1, 0.9).unwrap()]];
        assert_eq!(map_50_95(&dets, &gts, &[0, 1]), Some(1.0));
    }

    mod props {
        use super::*;
        use crate::metrics::InferenceConfig;
        use proptest::prelude::*;

        fn arb_boxes() -> impl Strategy<Value = Vec<(BBox, u32)>> {
            let bx = (0.0..60.0f64, 0.0..60.0f64, 2.0..25.0f64, 2.0..25.0f64)
                .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap());
            prop::collection::vec((bx, 0..3u32), 0..8)
        }

        type Scene = (Vec<Vec<Detection>>, Vec<Vec<GroundTruthInstance>>);

        fn arb_images() -> impl Strategy<Value = Scene> {
            prop::collection::vec(
                (arb_boxes(), prop::collection::vec(((0.0..60.0f64, 0.0..60.0f64, 2.0..25.0f64), 0..3u32, 0.0..=1.0f64), 0..10)),
                1..5,
            )
            .prop_map(|imgs| {
                imgs.into_iter()
                    .map(|(g, d)| {
                        let dets = d
                            .into_iter()
                            .map(|((x, y, s), c, p)| Detection::new(bb(x, y, x + s, y + s), c, p).unwrap())
                            .collect();
                        let gts = g.into_iter().map(|(b, c)| GroundTruthInstance::new(b, c)).collect();
                        (dets, gts)
                    })
                    .unzip()
            })
        }

        proptest! {
            #[test]
            fn map_lies_in_unit_interval((dets, gts) in arb_images()) {
                if let Some(m) = map_50_95(&dets, &gts, &[0, 1, 2]) {
                    prop_assert!((0.0..=1.0).contains(&m));
                }
            }

            #[test]
            fn duplicate_perfect_detection_never_lowers_map(
                (mut dets, gts) in arb_images(),
                pick in any::<prop::sample::Index>(),
                conf in 0.3..=1.0f64,
            ) {
                let with_gt: Vec<usize> = (0..gts.len()).filter(|&i| !gts[i].is_empty()).collect();
                prop_assume!(!with_gt.is_empty());
                let img = with_gt[pick.index(with_gt.len())];
                let g = gts[img][pick.index(gts[img].len())].clone();
                let perfect = Detection::new(g.bbox, g.class_id, conf).unwrap();
                dets[img].push(perfect);
                let inference = InferenceConfig::default();
                let score = |d: &[Vec<Detection>]| {
                    let post: Vec<Vec<Detection>> = d.iter().map(|x| inference.postprocess(x)).collect();
                    map_50_95(&post, &gts, &[0, 1, 2]).unwrap()
                };
                let before = score(&dets);
                dets[img].push(perfect);
                prop_assert!(score(&dets) >= before);
            }
        }
    }
}
