//! Localization evaluation: temporal IoU, per-class average precision with
//! greedy score-ordered matching, and mean AP over a set of IoU thresholds.
//!
//! AP is non-interpolated: the sum of precision at each true-positive rank,
//! divided by the number of ground-truth instances. Intervals are inclusive
//! segment index pairs, treated as half-open `[start, end+1)` spans.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A ground-truth action instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    pub video_id: String,
    pub class_id: usize,
    pub start_seg: usize,
    pub end_seg: usize,
}

/// A scored proposal attributed to a video, as serialized to proposal files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedProposal {
    pub video_id: String,
    pub class_id: usize,
    pub start_seg: usize,
    pub end_seg: usize,
    pub score: f64,
}

/// Temporal intersection over union of two inclusive segment intervals.
pub fn temporal_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let (a_start, a_end) = (a.0 as f64, a.1 as f64 + 1.0);
    let (b_start, b_end) = (b.0 as f64, b.1 as f64 + 1.0);
    let inter = (a_end.min(b_end) - a_start.max(b_start)).max(0.0);
    let union = (a_end - a_start) + (b_end - b_start) - inter;
    inter / union
}

/// Average precision for one class at one IoU threshold.
///
/// Proposals are ranked by descending score (ties by earlier start, then
/// video id); each is greedily matched to the unmatched same-video ground
/// truth with the highest IoU at or above the threshold.
pub fn average_precision(
    proposals: &[DetectedProposal],
    gts: &[GroundTruthInstance],
    iou_threshold: f64,
) -> Result<f64> {
    if gts.is_empty() {
        return Err(Error::invalid(
            "average precision is undefined for a class with no ground truth",
        ));
    }

    let mut ranked: Vec<&DetectedProposal> = proposals.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.start_seg.cmp(&b.start_seg))
            .then(a.video_id.cmp(&b.video_id))
            .then(a.end_seg.cmp(&b.end_seg))
    });

    let mut matched = vec![false; gts.len()];
    let mut true_positives = 0usize;
    let mut precision_sum = 0.0;
    for (rank0, p) in ranked.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if matched[g] || gt.video_id != p.video_id {
                continue;
            }
            let iou = temporal_iou((p.start_seg, p.end_seg), (gt.start_seg, gt.end_seg));
            if iou < iou_threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((bg, biou)) => {
                    iou > biou
                        || (iou == biou
                            && (gt.start_seg, g) < (gts[bg].start_seg, bg))
                }
            };
            if better {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            debug_assert!(!matched[g], "ground truth matched twice");
            matched[g] = true;
            true_positives += 1;
            precision_sum += true_positives as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(precision_sum / gts.len() as f64)
}

/// Per-threshold mAP results.
#[derive(Debug, Clone)]
pub struct ThresholdResult {
    pub iou: f64,
    /// `(class_id, ap)` for every class with at least one ground truth.
    pub per_class: Vec<(usize, f64)>,
    pub mean_ap: f64,
}

/// Full evaluation report over a set of IoU thresholds.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub thresholds: Vec<ThresholdResult>,
    /// Mean of the per-threshold mAPs.
    pub average_map: f64,
}

impl EvalReport {
    pub fn map_at(&self, iou: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .find(|t| (t.iou - iou).abs() < 1e-9)
            .map(|t| t.mean_ap)
    }
}

/// Mean average precision per IoU threshold, over classes with at least one
/// ground-truth instance. Classes without ground truth are excluded rather
/// than scored as zero.
pub fn mean_ap(
    proposals: &[DetectedProposal],
    gts: &[GroundTruthInstance],
    iou_thresholds: &[f64],
) -> Result<EvalReport> {
    if gts.is_empty() {
        return Err(Error::invalid("cannot evaluate with an empty ground-truth set"));
    }
    if iou_thresholds.is_empty() {
        return Err(Error::invalid("at least one IoU threshold required"));
    }

    let classes: BTreeSet<usize> = gts.iter().map(|g| g.class_id).collect();
    let mut gts_by_class: BTreeMap<usize, Vec<GroundTruthInstance>> = BTreeMap::new();
    for g in gts {
        gts_by_class.entry(g.class_id).or_default().push(g.clone());
    }
    let mut props_by_class: BTreeMap<usize, Vec<DetectedProposal>> = BTreeMap::new();
    for p in proposals {
        props_by_class.entry(p.class_id).or_default().push(p.clone());
    }
    let empty: Vec<DetectedProposal> = Vec::new();

    let mut thresholds = Vec::with_capacity(iou_thresholds.len());
    for &iou in iou_thresholds {
        let mut per_class = Vec::with_capacity(classes.len());
        for &c in &classes {
            let ap = average_precision(
                props_by_class.get(&c).unwrap_or(&empty),
                &gts_by_class[&c],
                iou,
            )?;
            per_class.push((c, ap));
        }
        let mean = per_class.iter().map(|&(_, ap)| ap).sum::<f64>() / per_class.len() as f64;
        thresholds.push(ThresholdResult {
            iou,
            per_class,
            mean_ap: mean,
        });
    }
    let average_map =
        thresholds.iter().map(|t| t.mean_ap).sum::<f64>() / thresholds.len() as f64;
    Ok(EvalReport {
        thresholds,
        average_map,
    })
}
