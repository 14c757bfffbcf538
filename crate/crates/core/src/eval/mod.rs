//! KITTI-style detection metrics for a single "mobile" class: greedy
//! matching, 40-point interpolated average precision, and score-free
//! label precision/recall, all bucketed by BEV range.

pub mod iou;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Bbox, LabelSet};

pub use iou::{iou_3d, iou_bev};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouMode {
    pub fn iou(&self, a: &Bbox, b: &Bbox) -> f64 {
        match self {
            IouMode::Bev => iou_bev(a, b),
            IouMode::ThreeD => iou_3d(a, b),
        }
    }
}

impl std::fmt::Display for IouMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IouMode::Bev => f.write_str("bev"),
            IouMode::ThreeD => f.write_str("3d"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub mode: IouMode,
    /// Half-open `[lo, hi)` BEV range buckets, meters from the sensor.
    /// Boxes outside every bucket are ignored entirely.
    pub buckets: Vec<(f64, f64)>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.25,
            mode: IouMode::Bev,
            buckets: vec![(0.0, 30.0), (30.0, 50.0), (50.0, 80.0), (0.0, 80.0)],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::Config(format!(
                "IoU threshold must lie in [0, 1], got {}",
                self.iou_threshold
            )));
        }
        if self.buckets.is_empty() {
            return Err(Error::Config("at least one depth bucket required".into()));
        }
        for &(lo, hi) in &self.buckets {
            if !(hi > lo) || lo < 0.0 {
                return Err(Error::Config(format!(
                    "bucket ({lo}, {hi}) must be ordered and non-negative"
                )));
            }
        }
        Ok(())
    }

    /// Union of all buckets; boxes outside it are dropped before matching.
    fn range_hull(&self) -> (f64, f64) {
        let lo = self.buckets.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
        let hi = self.buckets.iter().map(|b| b.1).fold(0.0, f64::max);
        (lo, hi)
    }

    fn bucket_name(lo: f64, hi: f64) -> String {
        format!("{}-{}", lo as i64, hi as i64)
    }
}

fn in_range(b: &Bbox, lo: f64, hi: f64) -> bool {
    let d = b.bev_range();
    d >= lo && d < hi
}

/// Outcome of matching one frame's detections against its ground truth.
#[derive(Debug, Clone)]
pub struct MatchResult {
    /// Per detection: matched GT index and the match IoU, or `None`.
    pub det_matches: Vec<Option<(usize, f64)>>,
    /// Per ground truth: whether some detection claimed it.
    pub gt_covered: Vec<bool>,
}

/// Greedy score-ordered matching: each detection, from highest score
/// down (ties by index), takes the highest-IoU still-unmatched ground
/// truth with IoU at or above the threshold.
pub fn match_greedy(dets: &[Bbox], gts: &[Bbox], cfg: &EvalConfig) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let sa = dets[a].score.unwrap_or(1.0);
        let sb = dets[b].score.unwrap_or(1.0);
        sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
    });
    let mut det_matches = vec![None; dets.len()];
    let mut gt_covered = vec![false; gts.len()];
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_covered[g] {
                continue;
            }
            let iou = cfg.mode.iou(&dets[d], gt);
            if iou < cfg.iou_threshold {
                continue;
            }
            // Strictly-greater keeps the lowest GT index on ties.
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, iou)) = best {
            gt_covered[g] = true;
            det_matches[d] = Some((g, iou));
        }
    }
    MatchResult {
        det_matches,
        gt_covered,
    }
}

/// 40-point interpolated average precision over a pooled PR curve.
///
/// `dets` are (score, is_true_positive) pairs across all frames;
/// `total_gt` is the pooled ground-truth count. Returns `None` when
/// there is no ground truth (AP undefined, not zero).
pub fn average_precision(dets: &[(f64, bool)], total_gt: usize) -> Option<f64> {
    if total_gt == 0 {
        return None;
    }
    let curve = pr_curve(dets, total_gt);
    let mut sum = 0.0;
    for i in 1..=40 {
        let r = i as f64 / 40.0;
        let best = curve
            .iter()
            .filter(|&&(recall, _)| recall >= r - 1e-12)
            .map(|&(_, precision)| precision)
            .fold(0.0, f64::max);
        sum += best;
    }
    Some(sum / 40.0)
}

/// Pooled precision-recall points, one per detection in score order.
pub fn pr_curve(dets: &[(f64, bool)], total_gt: usize) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].0.partial_cmp(&dets[a].0).unwrap().then(a.cmp(&b)));
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut curve = Vec::with_capacity(dets.len());
    for i in order {
        if dets[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / total_gt as f64;
        curve.push((recall, precision));
    }
    curve
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
}

/// Full evaluation report, keyed by bucket name ("0-30", ..., "0-80").
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: IouMode,
    pub iou: f64,
    pub buckets: BTreeMap<String, BucketMetrics>,
}

/// Score-aware detection evaluation: for each bucket, both detections
/// and ground truth are restricted to the range before matching, then
/// AP pools the per-frame results. Also returns the pooled PR curve of
/// the hull bucket for plotting.
pub fn evaluate_detections(
    dets: &[LabelSet],
    gts: &[LabelSet],
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<(f64, f64)>)> {
    cfg.validate()?;
    let pairs = align_frames(dets, gts)?;
    let mut report = EvalReport {
        mode: cfg.mode,
        iou: cfg.iou_threshold,
        buckets: BTreeMap::new(),
    };
    let hull = cfg.range_hull();
    let mut hull_curve = Vec::new();
    for &(lo, hi) in &cfg.buckets {
        let mut pooled: Vec<(f64, bool)> = Vec::new();
        let mut total_gt = 0usize;
        for &(det_set, gt_set) in &pairs {
            let dets: Vec<Bbox> = det_set
                .boxes
                .iter()
                .copied()
                .filter(|b| in_range(b, lo, hi))
                .collect();
            let gts: Vec<Bbox> = gt_set
                .boxes
                .iter()
                .copied()
                .filter(|b| in_range(b, lo, hi))
                .collect();
            total_gt += gts.len();
            let matches = match_greedy(&dets, &gts, cfg);
            for (d, m) in matches.det_matches.iter().enumerate() {
                pooled.push((dets[d].score.unwrap_or(1.0), m.is_some()));
            }
        }
        let ap = average_precision(&pooled, total_gt);
        report.buckets.insert(
            EvalConfig::bucket_name(lo, hi),
            BucketMetrics {
                ap,
                ..Default::default()
            },
        );
        if (lo, hi) == hull {
            hull_curve = pr_curve(&pooled, total_gt);
        }
    }
    Ok((report, hull_curve))
}

/// Score-free label quality: labels and ground truth are matched
/// greedily by descending IoU (one-to-one), then precision buckets by
/// label range and recall buckets by ground-truth range.
pub fn label_quality(labels: &[LabelSet], gts: &[LabelSet], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let pairs = align_frames(labels, gts)?;
    let (hull_lo, hull_hi) = cfg.range_hull();
    struct Tally {
        label_tp: usize,
        labels: usize,
        gt_tp: usize,
        gts: usize,
    }
    let mut tallies: Vec<Tally> = cfg
        .buckets
        .iter()
        .map(|_| Tally {
            label_tp: 0,
            labels: 0,
            gt_tp: 0,
            gts: 0,
        })
        .collect();
    for &(label_set, gt_set) in &pairs {
        let labels: Vec<Bbox> = label_set
            .boxes
            .iter()
            .copied()
            .filter(|b| in_range(b, hull_lo, hull_hi))
            .collect();
        let gts: Vec<Bbox> = gt_set
            .boxes
            .iter()
            .copied()
            .filter(|b| in_range(b, hull_lo, hull_hi))
            .collect();
        let (label_matched, gt_matched) = match_by_iou(&labels, &gts, cfg);
        for (bi, &(lo, hi)) in cfg.buckets.iter().enumerate() {
            for (li, b) in labels.iter().enumerate() {
                if in_range(b, lo, hi) {
                    tallies[bi].labels += 1;
                    if label_matched[li] {
                        tallies[bi].label_tp += 1;
                    }
                }
            }
            for (gi, b) in gts.iter().enumerate() {
                if in_range(b, lo, hi) {
                    tallies[bi].gts += 1;
                    if gt_matched[gi] {
                        tallies[bi].gt_tp += 1;
                    }
                }
            }
        }
    }
    let mut report = EvalReport {
        mode: cfg.mode,
        iou: cfg.iou_threshold,
        buckets: BTreeMap::new(),
    };
    for (bi, &(lo, hi)) in cfg.buckets.iter().enumerate() {
        let t = &tallies[bi];
        report.buckets.insert(
            EvalConfig::bucket_name(lo, hi),
            BucketMetrics {
                ap: None,
                precision: (t.labels > 0).then(|| t.label_tp as f64 / t.labels as f64),
                recall: (t.gts > 0).then(|| t.gt_tp as f64 / t.gts as f64),
            },
        );
    }
    Ok(report)
}

/// Recall of `labels` against `gts`, scores ignored, over the hull range.
pub fn max_recall(labels: &[LabelSet], gts: &[LabelSet], cfg: &EvalConfig) -> Result<Option<f64>> {
    let report = label_quality(labels, gts, cfg)?;
    let (lo, hi) = cfg.range_hull();
    Ok(report
        .buckets
        .get(&EvalConfig::bucket_name(lo, hi))
        .and_then(|m| m.recall))
}

/// One-to-one matching by descending IoU over all pairs at or above the
/// threshold. Deterministic: ties break on (label index, gt index).
fn match_by_iou(labels: &[Bbox], gts: &[Bbox], cfg: &EvalConfig) -> (Vec<bool>, Vec<bool>) {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (li, l) in labels.iter().enumerate() {
        for (gi, g) in gts.iter().enumerate() {
            let iou = cfg.mode.iou(l, g);
            if iou >= cfg.iou_threshold {
                pairs.push((iou, li, gi));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut label_matched = vec![false; labels.len()];
    let mut gt_matched = vec![false; gts.len()];
    for (_, li, gi) in pairs {
        if !label_matched[li] && !gt_matched[gi] {
            label_matched[li] = true;
            gt_matched[gi] = true;
        }
    }
    (label_matched, gt_matched)
}

/// Pair up label sets by frame id; every frame must appear on both
/// sides.
fn align_frames<'a>(
    a: &'a [LabelSet],
    b: &'a [LabelSet],
) -> Result<Vec<(&'a LabelSet, &'a LabelSet)>> {
    let mut b_by_frame: BTreeMap<&str, &LabelSet> = BTreeMap::new();
    for ls in b {
        b_by_frame.insert(ls.frame_id.as_str(), ls);
    }
    let mut pairs = Vec::with_capacity(a.len());
    let mut missing: Vec<&str> = Vec::new();
    let mut seen: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
    for ls in a {
        seen.insert(ls.frame_id.as_str());
        match b_by_frame.get(ls.frame_id.as_str()) {
            Some(other) => pairs.push((ls, *other)),
            None => missing.push(&ls.frame_id),
        }
    }
    let extra: Vec<&str> = b_by_frame
        .keys()
        .copied()
        .filter(|f| !seen.contains(f))
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Validation(format!(
            "frame mismatch between label files: missing from second {missing:?}, missing from first {extra:?}"
        )));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::LabelKind;
    use approx::assert_relative_eq;

    fn bbox(cx: f64, cy: f64, score: Option<f64>) -> Bbox {
        Bbox::new([cx, cy, 0.0], 4.0, 2.0, 1.5, 0.0, score).unwrap()
    }

    #[test]
    fn single_match_is_tp() {
        // Offset small enough for IoU above 0.5.
        let dets = vec![bbox(0.5, 0.0, Some(0.9))];
        let gts = vec![bbox(0.0, 0.0, None)];
        let cfg = EvalConfig {
            iou_threshold: 0.5,
            ..Default::default()
        };
        let m = match_greedy(&dets, &gts, &cfg);
        assert!(m.det_matches[0].is_some());
        assert!(m.gt_covered[0]);
    }

    #[test]
    fn one_to_one_matching() {
        let dets = vec![bbox(0.0, 0.0, Some(0.9)), bbox(0.1, 0.0, Some(0.8))];
        let gts = vec![bbox(0.0, 0.0, None)];
        let cfg = EvalConfig::default();
        let m = match_greedy(&dets, &gts, &cfg);
        assert!(m.det_matches[0].is_some(), "higher score wins the GT");
        assert!(m.det_matches[1].is_none(), "second det is a false positive");
    }

    #[test]
    fn ap_hand_case() {
        // 2 GT; detections TP at 0.9, FP at 0.8: precision 1 at recall
        // 0.5, then 0.5 at recall 0.5. 20 of 40 recall points see
        // precision 1, the rest 0.
        let ap = average_precision(&[(0.9, true), (0.8, false)], 2).unwrap();
        assert_relative_eq!(ap, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn ap_perfect_and_all_fp() {
        let ap = average_precision(&[(0.9, true), (0.8, true)], 2).unwrap();
        assert_relative_eq!(ap, 1.0, epsilon = 1e-15);
        let ap = average_precision(&[(0.9, false)], 2).unwrap();
        assert_relative_eq!(ap, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn ap_undefined_without_gt() {
        assert_eq!(average_precision(&[(0.9, false)], 0), None);
    }

    #[test]
    fn ap_monotone_in_added_top_tp() {
        let base = vec![(0.9, true), (0.7, false), (0.6, true)];
        let ap0 = average_precision(&base, 4).unwrap();
        let mut more = base.clone();
        more.push((0.95, true));
        let ap1 = average_precision(&more, 4).unwrap();
        assert!(ap1 >= ap0);
    }

    fn frame(id: &str, kind: LabelKind, boxes: Vec<Bbox>) -> LabelSet {
        LabelSet::new(id, kind, boxes)
    }

    #[test]
    fn perfect_labels_have_unit_quality() {
        let gt = vec![frame(
            "f0",
            LabelKind::GroundTruth,
            vec![bbox(5.0, 0.0, None), bbox(40.0, 0.0, None)],
        )];
        let labels = vec![frame(
            "f0",
            LabelKind::Seed,
            vec![bbox(5.0, 0.0, None), bbox(40.0, 0.0, None)],
        )];
        let report = label_quality(&labels, &gt, &EvalConfig::default()).unwrap();
        let m = &report.buckets["0-80"];
        assert_eq!(m.precision, Some(1.0));
        assert_eq!(m.recall, Some(1.0));
        assert_eq!(report.buckets["0-30"].recall, Some(1.0));
        assert_eq!(report.buckets["30-50"].recall, Some(1.0));
        assert_eq!(report.buckets["50-80"].recall, None, "no GT in 50-80");
    }

    #[test]
    fn empty_labels_zero_recall_absent_precision() {
        let gt = vec![frame("f0", LabelKind::GroundTruth, vec![bbox(5.0, 0.0, None)])];
        let labels = vec![frame("f0", LabelKind::Seed, vec![])];
        let report = label_quality(&labels, &gt, &EvalConfig::default()).unwrap();
        let m = &report.buckets["0-80"];
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
    }

    #[test]
    fn one_missed_of_four_recall() {
        let gt = vec![frame(
            "f0",
            LabelKind::GroundTruth,
            (0..4).map(|i| bbox(5.0 + 10.0 * i as f64, 0.0, None)).collect(),
        )];
        let labels = vec![frame(
            "f0",
            LabelKind::Seed,
            (0..3).map(|i| bbox(5.0 + 10.0 * i as f64, 0.0, None)).collect(),
        )];
        let report = label_quality(&labels, &gt, &EvalConfig::default()).unwrap();
        assert_eq!(report.buckets["0-80"].recall, Some(0.75));
        let recall = max_recall(&labels, &gt, &EvalConfig::default()).unwrap();
        assert_eq!(recall, Some(0.75));
    }

    #[test]
    fn frame_mismatch_is_an_error() {
        let gt = vec![frame("f0", LabelKind::GroundTruth, vec![])];
        let labels = vec![frame("f1", LabelKind::Seed, vec![])];
        let err = label_quality(&labels, &gt, &EvalConfig::default()).unwrap_err();
        assert!(err.to_string().contains("f1"), "{err}");
        assert!(err.to_string().contains("f0"), "{err}");
    }

    #[test]
    fn boxes_outside_every_bucket_ignored() {
        let gt = vec![frame(
            "f0",
            LabelKind::GroundTruth,
            vec![bbox(5.0, 0.0, None), bbox(100.0, 0.0, None)],
        )];
        let labels = vec![frame("f0", LabelKind::Seed, vec![bbox(5.0, 0.0, None)])];
        let report = label_quality(&labels, &gt, &EvalConfig::default()).unwrap();
        // The 100 m GT does not count against recall.
        assert_eq!(report.buckets["0-80"].recall, Some(1.0));
    }

    #[test]
    fn detection_eval_end_to_end() {
        let gt = vec![frame(
            "f0",
            LabelKind::GroundTruth,
            vec![bbox(5.0, 0.0, None), bbox(35.0, 0.0, None)],
        )];
        let dets = vec![frame(
            "f0",
            LabelKind::Detection,
            vec![bbox(5.0, 0.0, Some(0.9)), bbox(60.0, 0.0, Some(0.8))],
        )];
        let (report, curve) = evaluate_detections(&dets, &gt, &EvalConfig::default()).unwrap();
        // 0-30: one GT, one TP det -> AP 1. 30-50: one GT, no det -> AP 0.
        assert_eq!(report.buckets["0-30"].ap, Some(1.0));
        assert_eq!(report.buckets["30-50"].ap, Some(0.0));
        // 50-80: no GT -> AP absent.
        assert_eq!(report.buckets["50-80"].ap, None);
        assert!(!curve.is_empty());
    }
}
