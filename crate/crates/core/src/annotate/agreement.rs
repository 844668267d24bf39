use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GroundTruthInstance;

/// Largest per-coordinate difference still treated as the same box.
pub const EDIT_TOLERANCE_PX: f64 = 1.0;

/// Per-frame label sets keyed by image id.
pub type FrameSet = BTreeMap<String, Vec<GroundTruthInstance>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    /// Reviewer added a box with no counterpart.
    Inserted,
    /// Reviewer removed a box.
    Deleted,
    /// Box kept but moved beyond tolerance or relabelled.
    Modified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEdit {
    pub kind: EditKind,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedFrame {
    pub image_id: String,
    pub reasons: Vec<FrameEdit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub total_frames: usize,
    pub edited_frames: usize,
    pub agreement: f64,
    pub flagged: Vec<FlaggedFrame>,
}

fn same(a: &GroundTruthInstance, b: &GroundTruthInstance) -> bool {
    a.class_id == b.class_id && a.bbox.max_coord_diff(&b.bbox) <= EDIT_TOLERANCE_PX
}

fn near(a: &GroundTruthInstance, b: &GroundTruthInstance) -> bool {
    a.bbox.max_coord_diff(&b.bbox) <= EDIT_TOLERANCE_PX || crate::geometry::iou(&a.bbox, &b.bbox) > 0.0
}

/// Maximum bipartite matching (Kuhn) between `left` and `right` under `ok`.
/// Returns, for each right element, the matched left index.
fn max_matching<F>(left: usize, right: usize, ok: F) -> Vec<Option<usize>>
where
    F: Fn(usize, usize) -> bool,
{
    fn augment<F: Fn(usize, usize) -> bool>(
        l: usize,
        right: usize,
        ok: &F,
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for r in 0..right {
            if seen[r] || !ok(l, r) {
                continue;
            }
            seen[r] = true;
            if owner[r].map_or(true, |o| augment(o, right, ok, seen, owner)) {
                owner[r] = Some(l);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; right];
    for l in 0..left {
        let mut seen = vec![false; right];
        augment(l, right, &ok, &mut seen, &mut owner);
    }
    owner
}

/// Classifies the differences between one frame's automatic and reviewed
/// labels. Empty when the sets agree up to tolerance.
pub fn frame_edits(auto: &[GroundTruthInstance], reviewed: &[GroundTruthInstance]) -> Vec<FrameEdit> {
    let exact = max_matching(auto.len(), reviewed.len(), |a, r| same(&auto[a], &reviewed[r]));
    let auto_left: Vec<usize> = (0..auto.len()).filter(|a| !exact.contains(&Some(*a))).collect();
    let rev_left: Vec<usize> = (0..reviewed.len()).filter(|r| exact[*r].is_none()).collect();
    // unmatched leftovers that still overlap count as modifications
    let loose = max_matching(auto_left.len(), rev_left.len(), |a, r| {
        near(&auto[auto_left[a]], &reviewed[rev_left[r]])
    });
    let modified = loose.iter().flatten().count();
    let deleted = auto_left.len() - modified;
    let inserted = rev_left.len() - modified;
    [
        (EditKind::Inserted, inserted),
        (EditKind::Deleted, deleted),
        (EditKind::Modified, modified),
    ]
    .into_iter()
    .filter(|(_, n)| *n > 0)
    .map(|(kind, count)| FrameEdit { kind, count })
    .collect()
}

/// Compares automatic labels with their reviewed versions frame by frame.
pub fn agreement_report(auto: &FrameSet, reviewed: &FrameSet) -> Result<ReviewReport> {
    if !auto.keys().eq(reviewed.keys()) {
        let only_auto = auto.keys().find(|k| !reviewed.contains_key(*k));
        let only_rev = reviewed.keys().find(|k| !auto.contains_key(*k));
        let detail = match (only_auto, only_rev) {
            (Some(k), _) => format!("`{k}` has no reviewed labels"),
            (_, Some(k)) => format!("`{k}` has no automatic labels"),
            _ => unreachable!("key sets differ"),
        };
        return Err(Error::FrameMismatch(detail));
    }
    let flagged: Vec<FlaggedFrame> = auto
        .iter()
        .filter_map(|(id, a)| {
            let reasons = frame_edits(a, &reviewed[id]);
            (!reasons.is_empty()).then(|| FlaggedFrame {
                image_id: id.clone(),
                reasons,
            })
        })
        .collect();
    let total = auto.len();
    let edited = flagged.len();
    let agreement = if total == 0 { 1.0 } else { 1.0 - edited as f64 / total as f64 };
    Ok(ReviewReport {
        total_frames: total,
        edited_frames: edited,
        agreement,
        flagged,
    })
}
