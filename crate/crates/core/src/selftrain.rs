//! Iterative self-training: train a detector on the current labels,
//! re-label the pool with its detections, filter the pseudo-labels by
//! PP score, and retrain from scratch.
//!
//! The detector is a contract so stronger backends can plug in later;
//! the shipped baseline is a deliberately simple geometric detector
//! whose job is to exercise the loop mechanics, not to win benchmarks.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{label_quality, EvalConfig};
use crate::seed::{
    estimate_ground, euclidean_dbscan, fit_box, nearest_rank_percentile, FilterConfig,
    GroundConfig,
};
use crate::types::{Bbox, LabelKind, LabelSet, Scan};

/// Contract for pluggable detectors.
///
/// Training always starts from scratch: `train` never sees a previous
/// model, and must be deterministic given `seed`. `infer` emits scored
/// detections in the frame's sensor coordinates.
pub trait Detector: Sync {
    type Model: Sync;

    fn train(&self, frames: &[Scan], labels: &[LabelSet], seed: u64) -> Result<Self::Model>;

    fn infer(&self, model: &Self::Model, frame: &Scan) -> LabelSet;
}

/// Geometric baseline detector: a log-dimension Gaussian prior over box
/// shape plus a ground-height prior, applied to plain-Euclidean point
/// clusters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineDetector {
    /// Euclidean DBSCAN radius for proposal clustering, meters.
    pub cluster_eps: f64,
    pub cluster_min_samples: usize,
    /// Detections below this score are not emitted.
    pub score_threshold: f64,
    pub ground: GroundConfig,
}

impl Default for BaselineDetector {
    fn default() -> Self {
        BaselineDetector {
            cluster_eps: 1.0,
            cluster_min_samples: 10,
            score_threshold: 0.5,
            ground: GroundConfig::default(),
        }
    }
}

/// Fitted priors of the baseline detector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometricModel {
    /// Mean and variance of (ln l, ln w, ln h) over the training boxes.
    pub log_dim_mean: [f64; 3],
    pub log_dim_var: [f64; 3],
    /// Mean and variance of the box-bottom height (sensor frame).
    pub bottom_mean: f64,
    pub bottom_var: f64,
    pub score_threshold: f64,
}

const VARIANCE_FLOOR: f64 = 1e-4;
/// Logistic calibration: squared-Mahalanobis distance at which the
/// score crosses 0.5, and the transition width.
const SCORE_MIDPOINT: f64 = 9.0;
const SCORE_SCALE: f64 = 2.0;

impl GeometricModel {
    /// Prior likelihood of a fitted box mapped through a logistic:
    /// near 1 at the prior mean, near 0 many prior sigmas away.
    pub fn score(&self, b: &Bbox) -> f64 {
        let feats = [b.l.ln(), b.w.ln(), b.h.ln()];
        let mut m2 = 0.0;
        for i in 0..3 {
            let d = feats[i] - self.log_dim_mean[i];
            m2 += d * d / self.log_dim_var[i];
        }
        let bottom = b.z_min();
        let d = bottom - self.bottom_mean;
        m2 += d * d / self.bottom_var;
        logistic((SCORE_MIDPOINT - m2) / SCORE_SCALE)
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.max(VARIANCE_FLOOR))
}

impl Detector for BaselineDetector {
    type Model = GeometricModel;

    fn train(&self, _frames: &[Scan], labels: &[LabelSet], _seed: u64) -> Result<GeometricModel> {
        let boxes: Vec<&Bbox> = labels.iter().flat_map(|ls| ls.boxes.iter()).collect();
        if boxes.is_empty() {
            return Err(Error::Validation(
                "cannot bootstrap a detector from zero labeled boxes".into(),
            ));
        }
        let mut log_dim_mean = [0.0; 3];
        let mut log_dim_var = [0.0; 3];
        for (i, dim) in [|b: &Bbox| b.l, |b: &Bbox| b.w, |b: &Bbox| b.h]
            .iter()
            .enumerate()
        {
            let values: Vec<f64> = boxes.iter().map(|b| dim(b).ln()).collect();
            (log_dim_mean[i], log_dim_var[i]) = mean_var(&values);
        }
        let bottoms: Vec<f64> = boxes.iter().map(|b| b.z_min()).collect();
        let (bottom_mean, bottom_var) = mean_var(&bottoms);
        Ok(GeometricModel {
            log_dim_mean,
            log_dim_var,
            bottom_mean,
            bottom_var,
            score_threshold: self.score_threshold,
        })
    }

    fn infer(&self, model: &GeometricModel, frame: &Scan) -> LabelSet {
        let points: Vec<_> = frame.points.iter().map(|p| p.xyz()).collect();
        let ground = estimate_ground(&points, &self.ground);
        // Clustering at eps = 1.0 would fuse every grounded object with
        // the road surface, so ground inliers are excluded first.
        let elevated: Vec<_> = points
            .iter()
            .copied()
            .filter(|&p| ground.height_of(p) > self.ground.inlier_threshold)
            .collect();
        let mut boxes = Vec::new();
        for cluster in euclidean_dbscan(&elevated, self.cluster_eps, self.cluster_min_samples) {
            if cluster.point_count() < 3 {
                continue;
            }
            let members: Vec<_> = cluster
                .indices
                .iter()
                .map(|&i| elevated[i as usize])
                .collect();
            let Ok(fit) = fit_box(&members, &ground) else {
                continue;
            };
            let score = model.score(&fit.bbox);
            if score >= model.score_threshold {
                let mut b = fit.bbox;
                b.score = Some(score);
                boxes.push(b);
            }
        }
        LabelSet::new(frame.scan_id.clone(), LabelKind::Detection, boxes)
    }
}

/// Drop every box whose interior PP scores say "persistent background".
///
/// For each box the scores of the scan points inside it are collected
/// (strict interior in BEV, closed vertically); the box is dropped when
/// the nearest-rank alpha-percentile of those scores exceeds gamma, or
/// when it contains no points at all. Frames without a PP field pass
/// through untouched: single-traversal data still participates in
/// self-training, unfiltered.
pub fn filter_by_pp(
    labels: &[LabelSet],
    scans: &BTreeMap<String, &Scan>,
    ppfields: &BTreeMap<String, Vec<f32>>,
    cfg: &FilterConfig,
) -> Vec<LabelSet> {
    labels
        .iter()
        .map(|ls| {
            let (Some(scan), Some(tau)) = (scans.get(&ls.frame_id), ppfields.get(&ls.frame_id))
            else {
                return ls.clone();
            };
            let kept: Vec<Bbox> = ls
                .boxes
                .iter()
                .copied()
                .filter(|b| {
                    let inside: Vec<f64> = scan
                        .points
                        .iter()
                        .zip(tau)
                        .filter(|(p, _)| b.contains(p.xyz()))
                        .map(|(_, &t)| t as f64)
                        .collect();
                    if inside.is_empty() {
                        return false;
                    }
                    nearest_rank_percentile(&inside, cfg.alpha) <= cfg.gamma
                })
                .collect();
            LabelSet::new(ls.frame_id.clone(), ls.kind, kept)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfTrainConfig {
    /// Self-training rounds after the initial seed round.
    pub rounds: usize,
    /// Apply PP filtering to pseudo-labels between rounds.
    pub pp_filter: bool,
    pub filter: FilterConfig,
    /// Metric configuration for the per-round label quality report.
    pub eval: EvalConfig,
    /// Determinism seed forwarded to detector training.
    pub seed: u64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            rounds: 10,
            pp_filter: true,
            filter: FilterConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
        }
    }
}

/// Label quality of one round, measured against ground truth over the
/// full evaluation range. `raw_*` are the metrics of the unfiltered
/// detections that round.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub raw_precision: Option<f64>,
    pub raw_recall: Option<f64>,
    pub box_count: usize,
    pub raw_box_count: usize,
}

#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    pub labels: Vec<LabelSet>,
    pub metrics: Option<RoundMetrics>,
}

/// Every round's label sets and metrics; `rounds[0]` holds the seeds.
#[derive(Debug)]
pub struct SelfTrainState {
    pub rounds: Vec<RoundRecord>,
}

impl SelfTrainState {
    pub fn final_labels(&self) -> &[LabelSet] {
        &self.rounds.last().expect("state has at least round 0").labels
    }
}

/// Run the self-training loop.
///
/// Round 0 trains on the seed labels. Each later round re-labels the
/// pool with the previous model, optionally PP-filters the detections,
/// and retrains from scratch on the result. When `gt` is given, every
/// round records label precision/recall.
pub fn self_train_loop<D: Detector>(
    pool: &[Scan],
    seed_labels: &[LabelSet],
    detector: &D,
    ppfields: &BTreeMap<String, Vec<f32>>,
    gt: Option<&[LabelSet]>,
    cfg: &SelfTrainConfig,
) -> Result<SelfTrainState> {
    if seed_labels.iter().all(|ls| ls.boxes.is_empty()) {
        return Err(Error::Validation(
            "seed label sets contain no boxes; nothing to bootstrap from".into(),
        ));
    }
    let scans: BTreeMap<String, &Scan> =
        pool.iter().map(|s| (s.scan_id.clone(), s)).collect();
    // Round 0 covers every pool frame, padding frames without seeds.
    let mut by_frame: BTreeMap<&str, &LabelSet> = BTreeMap::new();
    for ls in seed_labels {
        by_frame.insert(ls.frame_id.as_str(), ls);
    }
    let b0: Vec<LabelSet> = pool
        .iter()
        .map(|s| match by_frame.get(s.scan_id.as_str()) {
            Some(ls) => (*ls).clone(),
            None => LabelSet::new(s.scan_id.clone(), LabelKind::Seed, vec![]),
        })
        .collect();

    let mut state = SelfTrainState {
        rounds: vec![RoundRecord {
            round: 0,
            metrics: measure(&b0, &b0, gt, &cfg.eval)?,
            labels: b0.clone(),
        }],
    };
    let mut model = detector
        .train(pool, &b0, cfg.seed)
        .map_err(|e| Error::Validation(format!("detector training failed in round 0: {e}")))?;

    for round in 1..=cfg.rounds {
        let raw: Vec<LabelSet> = pool
            .par_iter()
            .map(|frame| detector.infer(&model, frame))
            .collect();
        let mut labels = if cfg.pp_filter {
            filter_by_pp(&raw, &scans, ppfields, &cfg.filter)
        } else {
            raw.clone()
        };
        for ls in &mut labels {
            ls.kind = LabelKind::Pseudo;
        }
        let metrics = measure(&labels, &raw, gt, &cfg.eval)?;
        model = detector.train(pool, &labels, cfg.seed).map_err(|e| {
            Error::Validation(format!("detector training failed in round {round}: {e}"))
        })?;
        state.rounds.push(RoundRecord {
            round,
            labels,
            metrics,
        });
    }
    Ok(state)
}

fn measure(
    labels: &[LabelSet],
    raw: &[LabelSet],
    gt: Option<&[LabelSet]>,
    eval: &EvalConfig,
) -> Result<Option<RoundMetrics>> {
    let Some(gt) = gt else {
        return Ok(None);
    };
    let hull = {
        let lo = eval.buckets.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
        let hi = eval.buckets.iter().map(|b| b.1).fold(0.0, f64::max);
        format!("{}-{}", lo as i64, hi as i64)
    };
    let filtered_report = label_quality(labels, gt, eval)?;
    let raw_report = label_quality(raw, gt, eval)?;
    let f = &filtered_report.buckets[&hull];
    let r = &raw_report.buckets[&hull];
    Ok(Some(RoundMetrics {
        precision: f.precision,
        recall: f.recall,
        raw_precision: r.precision,
        raw_recall: r.recall,
        box_count: labels.iter().map(|l| l.boxes.len()).sum(),
        raw_box_count: raw.iter().map(|l| l.boxes.len()).sum(),
    }))
}
