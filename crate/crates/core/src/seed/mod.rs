//! Seed-label generation: PP-weighted graph clustering, cluster
//! filtering, ground estimation, box fitting, and common-sense box
//! filters, wired into a per-scan pipeline.

pub mod boxfit;
pub mod graph;
pub mod ground;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LabelKind, LabelSet, Scan};

pub use boxfit::{fit_box, FittedBox};
pub use graph::{build_graph, dbscan, euclidean_dbscan, Cluster, PpGraph};
pub use ground::{estimate_ground, GroundConfig, GroundPlane};

/// Cluster- and box-level filter thresholds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    /// Percentile (nearest rank, 0-100) of cluster PP scores tested
    /// against `gamma`.
    pub alpha: f64,
    /// PP-score threshold: clusters whose alpha-percentile exceeds it
    /// are persistent background and get dropped.
    pub gamma: f64,
    /// Minimum points per emitted box.
    pub min_points: usize,
    /// Box volume bounds, cubic meters.
    pub volume_min: f64,
    pub volume_max: f64,
    /// The highest cluster point must sit above this height.
    pub height_max_min: f64,
    /// The lowest cluster point must sit below this height.
    pub height_min_max: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            alpha: 20.0,
            gamma: 0.7,
            min_points: 10,
            volume_min: 0.5,
            volume_max: 120.0,
            height_max_min: 0.5,
            height_min_max: 1.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 100], got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if self.volume_min > self.volume_max || self.volume_min < 0.0 {
            return Err(Error::Config(format!(
                "volume range [{}, {}] must be ordered and non-negative",
                self.volume_min, self.volume_max
            )));
        }
        Ok(())
    }
}

/// Graph and clustering parameters for seed generation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    /// Mutual k-NN fan-out.
    pub k: usize,
    /// Neighbor distance cap, meters.
    pub r_prime: f64,
    /// DBSCAN edge-weight threshold.
    pub eps: f64,
    /// DBSCAN core-point neighborhood size (self included).
    pub min_samples: usize,
    pub filter: FilterConfig,
    pub ground: GroundConfig,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig {
            k: 70,
            r_prime: 2.0,
            eps: 0.1,
            min_samples: 10,
            filter: FilterConfig::default(),
            ground: GroundConfig::default(),
        }
    }
}

impl SeedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.r_prime > 0.0) {
            return Err(Error::Config(format!(
                "r_prime must be positive, got {}",
                self.r_prime
            )));
        }
        if !(0.0..=1.0).contains(&self.eps) {
            return Err(Error::Config(format!(
                "eps is an edge-weight threshold in [0, 1], got {}",
                self.eps
            )));
        }
        if self.min_samples == 0 {
            return Err(Error::Config("min_samples must be at least 1".into()));
        }
        self.filter.validate()
    }
}

/// Nearest-rank percentile: the value at 1-based index
/// `ceil(alpha/100 * n)` of the sorted sample (clamped to the ends).
pub fn nearest_rank_percentile(values: &[f64], alpha: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((alpha / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Keep clusters whose alpha-percentile PP score is at most gamma, and
/// cache that percentile on the survivors.
pub fn filter_clusters(clusters: Vec<Cluster>, tau: &[f32], cfg: &FilterConfig) -> Vec<Cluster> {
    clusters
        .into_iter()
        .filter_map(|mut cluster| {
            let scores: Vec<f64> = cluster
                .indices
                .iter()
                .map(|&i| tau[i as usize] as f64)
                .collect();
            let pct = nearest_rank_percentile(&scores, cfg.alpha);
            cluster.tau_percentile = Some(pct);
            (pct <= cfg.gamma).then_some(cluster)
        })
        .collect()
}

/// A fitted box still carrying its source cluster.
#[derive(Debug, Clone)]
pub struct SeedCandidate {
    pub cluster: Cluster,
    pub fit: FittedBox,
}

/// Apply the common-sense box filters: enough points, sane volume, not
/// floating, not buried.
pub fn common_sense_filter(candidates: Vec<SeedCandidate>, cfg: &FilterConfig) -> Vec<SeedCandidate> {
    let kept: Vec<SeedCandidate> = candidates
        .into_iter()
        .filter(|c| {
            c.cluster.point_count() >= cfg.min_points
                && (cfg.volume_min..=cfg.volume_max).contains(&c.fit.bbox.volume())
                && c.fit.height_max > cfg.height_max_min
                && c.fit.height_min < cfg.height_min_max
        })
        .collect();
    for c in &kept {
        debug_assert!(
            c.cluster.point_count() >= cfg.min_points
                && (cfg.volume_min..=cfg.volume_max).contains(&c.fit.bbox.volume())
                && c.fit.height_max > cfg.height_max_min
                && c.fit.height_min < cfg.height_min_max,
            "emitted seed box violates a common-sense predicate"
        );
    }
    kept
}

/// Full per-scan seed pipeline. `tau` must align with `scan.points`;
/// the emitted boxes are in the scan's sensor frame.
pub fn generate_seed_labels(scan: &Scan, tau: &[f32], cfg: &SeedConfig) -> Result<LabelSet> {
    cfg.validate()?;
    if tau.len() != scan.points.len() {
        return Err(Error::Validation(format!(
            "PP field length {} does not match scan point count {}",
            tau.len(),
            scan.points.len()
        )));
    }
    let points: Vec<_> = scan.points.iter().map(|p| p.xyz()).collect();
    let graph = build_graph(&points, tau, cfg.k, cfg.r_prime);
    let clusters = dbscan(&graph, cfg.eps, cfg.min_samples);
    let clusters = filter_clusters(clusters, tau, &cfg.filter);
    let ground = estimate_ground(&points, &cfg.ground);
    let mut candidates = Vec::new();
    for cluster in clusters {
        if cluster.point_count() < 3 {
            continue;
        }
        let member_points: Vec<_> = cluster.indices.iter().map(|&i| points[i as usize]).collect();
        let fit = fit_box(&member_points, &ground)?;
        candidates.push(SeedCandidate { cluster, fit });
    }
    let kept = common_sense_filter(candidates, &cfg.filter);
    Ok(LabelSet::new(
        scan.scan_id.clone(),
        LabelKind::Seed,
        kept.into_iter().map(|c| c.fit.bbox).collect(),
    ))
}
