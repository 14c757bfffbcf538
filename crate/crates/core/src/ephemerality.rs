//! Persistence-point (PP) scoring from multi-traversal neighborhoods.
//!
//! For a query point q and traversal t, `N_t(q)` counts the points of
//! traversal t's aggregated dense cloud that lie strictly within radius
//! `r` of q. Normalizing the counts into a distribution over traversals
//! and taking its entropy (normalized by `log T`) yields the PP score
//! `tau` in `[0, 1]`: near 1 for static background (counts look the same
//! in every traversal), near 0 for things that were only ever there once.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::index::VoxelGrid;
use crate::types::{Scan, Traversal};

/// Along-route window for aggregating scans around a query location.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationWindow {
    /// Inner edge of the ego-distance band, meters.
    pub h_start: f64,
    /// Outer edge of the ego-distance band, meters.
    pub h_end: f64,
    /// Minimum spacing between consecutive selected scans, meters.
    pub spacing: f64,
    /// Restrict selection to scans ahead of the query heading. The
    /// aggregation band is omnidirectional by default; flip this on to
    /// approximate a frontal-only capture geometry.
    pub frontal_only: bool,
}

impl Default for AggregationWindow {
    fn default() -> Self {
        AggregationWindow {
            h_start: 0.0,
            h_end: 70.0,
            spacing: 2.0,
            frontal_only: false,
        }
    }
}

impl AggregationWindow {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_end > self.h_start) || self.h_start < -self.h_end {
            return Err(Error::Config(format!(
                "aggregation window requires h_end > h_start >= -h_end, got [{}, {}]",
                self.h_start, self.h_end
            )));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::Config(format!(
                "aggregation spacing must be positive, got {}",
                self.spacing
            )));
        }
        Ok(())
    }
}

/// Aggregated world-frame points of one traversal near a query location,
/// indexed for radius counting.
#[derive(Debug)]
pub struct DenseCloud {
    pub traversal_id: String,
    grid: VoxelGrid,
}

impl DenseCloud {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }
}

/// Per-point PP scores aligned with a query scan's points.
#[derive(Debug, Clone)]
pub struct PpField {
    pub scan_id: String,
    pub tau: Vec<f32>,
    /// Number of traversals that contributed count distributions.
    pub traversal_count: usize,
}

/// Select the scans of `traversal` whose ego position falls in the
/// window band around `c`, greedily thinned in traversal order so that
/// consecutive selected ego positions are at least `spacing` apart.
pub fn select_scans<'a>(
    traversal: &'a Traversal,
    c: Vec3,
    heading: Option<Vec3>,
    window: &AggregationWindow,
) -> Vec<&'a Scan> {
    let lo = window.h_start.max(0.0);
    let hi = window.h_end;
    let mut selected: Vec<&Scan> = Vec::new();
    let mut last_pos: Option<Vec3> = None;
    for scan in &traversal.scans {
        let ego = scan.ego_position();
        let d = geom::norm(geom::sub(ego, c));
        if d < lo || d > hi {
            continue;
        }
        if window.frontal_only {
            if let Some(h) = heading {
                if geom::dot(geom::sub(ego, c), h) < 0.0 {
                    continue;
                }
            }
        }
        if let Some(prev) = last_pos {
            if geom::norm(geom::sub(ego, prev)) < window.spacing {
                continue;
            }
        }
        selected.push(scan);
        last_pos = Some(ego);
    }
    selected
}

/// Concatenate the selected scans' world-frame points and index them
/// with cell size `r`. Duplicate points are preserved: counts measure
/// raw return density, and repeated structure legitimately raises it.
pub fn build_dense_cloud(selected: &[&Scan], r: f64) -> Result<DenseCloud> {
    let first = selected.first().ok_or_else(|| {
        Error::Validation("empty scan selection: traversal contributes no counts".into())
    })?;
    let mut points = Vec::with_capacity(selected.iter().map(|s| s.points.len()).sum());
    for scan in selected {
        points.extend(scan.to_world());
    }
    Ok(DenseCloud {
        traversal_id: first.traversal_id.clone(),
        grid: VoxelGrid::build(points, r),
    })
}

/// Compute the PP score of every point in `query` against one dense
/// cloud per traversal.
///
/// Scores use natural-log entropy normalized by `ln T`; the result is
/// invariant to the logarithm base. A point with zero counts in every
/// traversal scores 0.
pub fn pp_score(query: &Scan, clouds: &[DenseCloud], r: f64) -> Result<PpField> {
    let t = clouds.len();
    if t < 2 {
        return Err(Error::Validation(format!(
            "PP score needs at least 2 traversals, got {t}"
        )));
    }
    if !(r > 0.0) {
        return Err(Error::Config(format!("radius must be positive, got {r}")));
    }
    let world = query.to_world();
    let log_t = (t as f64).ln();
    let tau: Vec<f32> = world
        .par_iter()
        .map_init(
            || vec![0usize; t],
            |counts, &q| {
                for (slot, cloud) in counts.iter_mut().zip(clouds) {
                    *slot = cloud.grid.count_within(q, r);
                }
                tau_from_counts(counts, log_t) as f32
            },
        )
        .collect();
    Ok(PpField {
        scan_id: query.scan_id.clone(),
        tau,
        traversal_count: t,
    })
}

/// Normalized entropy of the count distribution; 0 when all counts are 0.
pub fn tau_from_counts(counts: &[usize], log_t: f64) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let mut entropy = 0.0;
    for &n in counts {
        if n > 0 {
            let p = n as f64 / total;
            entropy -= p * p.ln();
        }
    }
    (entropy / log_t).clamp(0.0, 1.0)
}

/// Build per-traversal dense clouds for a query scan and score it.
///
/// Traversals with no scans inside the window are skipped. Returns
/// `None` when fewer than two traversals cover the location: the PP
/// score is undefined there and downstream stages treat such frames as
/// unfiltered.
///
/// This is the reference path; it rebuilds the windowed dense clouds
/// from scratch. Batch work over many query scans should go through
/// [`PpEngine`], which indexes each traversal once.
pub fn pp_score_for_scan(
    query: &Scan,
    traversals: &[Traversal],
    window: &AggregationWindow,
    r: f64,
    include_own_traversal: bool,
) -> Result<Option<PpField>> {
    window.validate()?;
    let c = query.ego_position();
    let mut clouds = Vec::new();
    for traversal in traversals {
        if !include_own_traversal && traversal.traversal_id == query.traversal_id {
            continue;
        }
        let selected = select_scans(traversal, c, None, window);
        if selected.is_empty() {
            continue;
        }
        clouds.push(build_dense_cloud(&selected, r)?);
    }
    if clouds.len() < 2 {
        return Ok(None);
    }
    pp_score(query, &clouds, r).map(Some)
}

/// One whole traversal indexed for windowed counting: a single grid
/// over every world-frame point, with the owning scan recorded per
/// point so the aggregation window becomes a per-query index filter.
struct TraversalIndex {
    traversal_id: String,
    grid: VoxelGrid,
    scan_of_point: Vec<u32>,
    ego_positions: Vec<Vec3>,
}

impl TraversalIndex {
    fn build(traversal: &Traversal, r: f64) -> TraversalIndex {
        let mut points = Vec::new();
        let mut scan_of_point = Vec::new();
        for (si, scan) in traversal.scans.iter().enumerate() {
            points.extend(scan.to_world());
            scan_of_point.resize(points.len(), si as u32);
        }
        TraversalIndex {
            traversal_id: traversal.traversal_id.clone(),
            grid: VoxelGrid::build(points, r),
            scan_of_point,
            ego_positions: traversal.scans.iter().map(|s| s.ego_position()).collect(),
        }
    }

    /// Scan selection mask for a query location: in-window, greedily
    /// spacing-thinned in traversal order (same rule as
    /// [`select_scans`]).
    fn selected_mask(&self, c: Vec3, window: &AggregationWindow) -> Option<Vec<bool>> {
        let lo = window.h_start.max(0.0);
        let hi = window.h_end;
        let mut mask = vec![false; self.ego_positions.len()];
        let mut any = false;
        let mut last_pos: Option<Vec3> = None;
        for (i, &ego) in self.ego_positions.iter().enumerate() {
            let d = geom::norm(geom::sub(ego, c));
            if d < lo || d > hi {
                continue;
            }
            if let Some(prev) = last_pos {
                if geom::norm(geom::sub(ego, prev)) < window.spacing {
                    continue;
                }
            }
            mask[i] = true;
            any = true;
            last_pos = Some(ego);
        }
        any.then_some(mask)
    }
}

/// Batch PP scoring: every traversal is transformed and indexed once,
/// then each query scan costs only the windowed radius counts.
pub struct PpEngine {
    indices: Vec<TraversalIndex>,
    window: AggregationWindow,
    r: f64,
    include_own_traversal: bool,
}

impl PpEngine {
    pub fn new(
        traversals: &[Traversal],
        window: AggregationWindow,
        r: f64,
        include_own_traversal: bool,
    ) -> Result<PpEngine> {
        window.validate()?;
        if !(r > 0.0) {
            return Err(Error::Config(format!("radius must be positive, got {r}")));
        }
        let indices: Vec<TraversalIndex> = traversals
            .par_iter()
            .map(|t| TraversalIndex::build(t, r))
            .collect();
        Ok(PpEngine {
            indices,
            window,
            r,
            include_own_traversal,
        })
    }

    /// PP field for one query scan, or `None` without >= 2 covering
    /// traversals. Equivalent to [`pp_score_for_scan`] on the same
    /// inputs.
    pub fn field_for(&self, query: &Scan) -> Option<PpField> {
        let c = query.ego_position();
        let active: Vec<(&TraversalIndex, Vec<bool>)> = self
            .indices
            .iter()
            .filter(|idx| {
                self.include_own_traversal || idx.traversal_id != query.traversal_id
            })
            .filter_map(|idx| idx.selected_mask(c, &self.window).map(|m| (idx, m)))
            .collect();
        let t = active.len();
        if t < 2 {
            return None;
        }
        let world = query.to_world();
        let log_t = (t as f64).ln();
        let tau: Vec<f32> = world
            .par_iter()
            .map_init(
                || vec![0usize; t],
                |counts, &q| {
                    for (slot, (idx, mask)) in counts.iter_mut().zip(&active) {
                        *slot = idx.grid.count_within_where(q, self.r, |point| {
                            mask[idx.scan_of_point[point as usize] as usize]
                        });
                    }
                    tau_from_counts(counts, log_t) as f32
                },
            )
            .collect();
        Some(PpField {
            scan_id: query.scan_id.clone(),
            tau,
            traversal_count: t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose;
    use crate::types::Point;
    use approx::assert_relative_eq;

    fn point(x: f64, y: f64, z: f64) -> Point {
        Point {
            x,
            y,
            z,
            intensity: 0.5,
        }
    }

    fn scan_at(id: &str, tid: &str, ego: Vec3, points: Vec<Point>) -> Scan {
        Scan {
            scan_id: id.into(),
            traversal_id: tid.into(),
            points,
            pose: Pose {
                rotation: Pose::identity().rotation,
                translation: ego,
            },
        }
    }

    #[test]
    fn greedy_spacing_selects_every_other_meter() {
        let scans: Vec<Scan> = (0..=10)
            .map(|i| scan_at(&format!("s{i}"), "t0", [i as f64, 0.0, 0.0], vec![point(0.0, 0.0, 0.0)]))
            .collect();
        let traversal = Traversal {
            traversal_id: "t0".into(),
            scans,
        };
        let window = AggregationWindow::default();
        let picked = select_scans(&traversal, [0.0; 3], None, &window);
        let ids: Vec<&str> = picked.iter().map(|s| s.scan_id.as_str()).collect();
        assert_eq!(ids, vec!["s0", "s2", "s4", "s6", "s8", "s10"]);
    }

    #[test]
    fn out_of_window_scans_excluded() {
        let scans = vec![scan_at("far", "t0", [100.0, 0.0, 0.0], vec![point(0.0, 0.0, 0.0)])];
        let traversal = Traversal {
            traversal_id: "t0".into(),
            scans,
        };
        let picked = select_scans(&traversal, [0.0; 3], None, &AggregationWindow::default());
        assert!(picked.is_empty());
    }

    #[test]
    fn route_passing_twice_contributes_both_passes() {
        // Ego track goes out along +x and comes back: positions near c on
        // both legs are selected, still spacing-thinned.
        let mut scans = Vec::new();
        for i in 0..=20 {
            scans.push(scan_at(
                &format!("out{i}"),
                "t0",
                [i as f64 * 2.0, 0.0, 0.0],
                vec![point(0.0, 0.0, 0.0)],
            ));
        }
        for i in 0..=20 {
            scans.push(scan_at(
                &format!("back{i}"),
                "t0",
                [40.0 - i as f64 * 2.0, 5.0, 0.0],
                vec![point(0.0, 0.0, 0.0)],
            ));
        }
        let traversal = Traversal {
            traversal_id: "t0".into(),
            scans,
        };
        let picked = select_scans(&traversal, [0.0; 3], None, &AggregationWindow::default());
        let outbound = picked.iter().filter(|s| s.scan_id.starts_with("out")).count();
        let inbound = picked.iter().filter(|s| s.scan_id.starts_with("back")).count();
        assert!(outbound > 0 && inbound > 0);
    }

    #[test]
    fn dense_cloud_concatenates_without_dedup() {
        let a = scan_at("a", "t0", [0.0; 3], vec![point(1.0, 0.0, 0.0); 100]);
        let b = scan_at("b", "t0", [0.0; 3], vec![point(1.0, 0.0, 0.0); 100]);
        let cloud = build_dense_cloud(&[&a, &b], 0.3).unwrap();
        assert_eq!(cloud.len(), 200);
    }

    #[test]
    fn dense_cloud_identity_pose_keeps_raw_points() {
        let a = scan_at("a", "t0", [0.0; 3], vec![point(1.0, 2.0, 3.0)]);
        let cloud = build_dense_cloud(&[&a], 0.3).unwrap();
        assert_eq!(cloud.grid().points(), &[[1.0, 2.0, 3.0]]);
    }

    #[test]
    fn empty_selection_is_an_error() {
        assert!(build_dense_cloud(&[], 0.3).is_err());
    }

    fn cloud_with_counts(n: usize) -> DenseCloud {
        // n copies of the origin so a query at the origin counts n; a
        // zero-count cloud holds a single far-away point.
        let points = if n == 0 {
            vec![point(100.0, 100.0, 100.0)]
        } else {
            vec![point(0.0, 0.0, 0.0); n]
        };
        let scan = scan_at("x", "t", [0.0; 3], points);
        build_dense_cloud(&[&scan], 0.3).unwrap()
    }

    fn tau_of(counts: &[usize]) -> f64 {
        let clouds: Vec<DenseCloud> = counts.iter().map(|&n| cloud_with_counts(n)).collect();
        let query = scan_at("q", "tq", [0.0; 3], vec![point(0.0, 0.0, 0.0)]);
        let field = pp_score(&query, &clouds, 0.3).unwrap();
        field.tau[0] as f64
    }

    #[test]
    fn all_zero_counts_score_zero() {
        assert_eq!(tau_of(&[0, 0, 0]), 0.0);
    }

    #[test]
    fn uniform_counts_score_one() {
        assert_relative_eq!(tau_of(&[5, 5]), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn degenerate_distribution_scores_zero() {
        assert_relative_eq!(tau_of(&[8, 0, 0, 0]), 0.0);
    }

    #[test]
    fn skewed_counts_match_direct_entropy() {
        // N = (2, 1, 1): tau = (0.5 ln 2 + 0.5 ln 4) / ln 3.
        let expected = (0.5 * 2.0f64.ln() + 0.5 * 4.0f64.ln()) / 3.0f64.ln();
        let got = tau_from_counts(&[2, 1, 1], 3.0f64.ln());
        assert_relative_eq!(got, expected, epsilon = 1e-9);
        // And through the full query path (f32 storage costs precision).
        assert_relative_eq!(tau_of(&[2, 1, 1]), expected, epsilon = 1e-6);
    }

    #[test]
    fn single_traversal_is_rejected() {
        let clouds = vec![cloud_with_counts(3)];
        let query = scan_at("q", "tq", [0.0; 3], vec![point(0.0, 0.0, 0.0)]);
        assert!(pp_score(&query, &clouds, 0.3).is_err());
    }

    #[test]
    fn tau_base_independence() {
        // Computing the entropy in log2 and normalizing by log2(T) must
        // agree with the natural-log form.
        for counts in [[2usize, 1, 1], [7, 3, 2], [1, 1, 1], [10, 0, 1]] {
            let nat = tau_from_counts(&counts, 3.0f64.ln());
            let total: usize = counts.iter().sum();
            let mut h2 = 0.0;
            for &n in &counts {
                if n > 0 {
                    let p = n as f64 / total as f64;
                    h2 -= p * p.log2();
                }
            }
            let base2 = h2 / 3.0f64.log2();
            assert_relative_eq!(nat, base2, epsilon = 1e-12);
        }
    }

    #[test]
    fn engine_matches_reference_path() {
        // Several traversals of mixed geometry: the batch engine and the
        // rebuild-per-query reference must agree bit for bit.
        let mut traversals = Vec::new();
        for t in 0..3 {
            let mut scans = Vec::new();
            for s in 0..12 {
                let ego = [s as f64 * 4.0, t as f64 * 0.2, 0.0];
                let mut pts = Vec::new();
                for i in 0..40 {
                    pts.push(point(
                        (i % 8) as f64 * 0.7 - 2.0 + t as f64 * 0.05,
                        (i / 8) as f64 * 0.7 - 1.5,
                        0.1 * (i % 3) as f64,
                    ));
                }
                scans.push(scan_at(&format!("t{t}_s{s}"), &format!("t{t}"), ego, pts));
            }
            traversals.push(Traversal {
                traversal_id: format!("t{t}"),
                scans,
            });
        }
        let window = AggregationWindow {
            h_end: 20.0,
            spacing: 5.0,
            ..Default::default()
        };
        let engine = PpEngine::new(&traversals, window, 0.3, true).unwrap();
        for query in &traversals[1].scans {
            let fast = engine.field_for(query);
            let slow = pp_score_for_scan(query, &traversals, &window, 0.3, true).unwrap();
            match (fast, slow) {
                (Some(a), Some(b)) => {
                    assert_eq!(a.traversal_count, b.traversal_count);
                    assert_eq!(a.tau, b.tau, "tau mismatch for {}", query.scan_id);
                }
                (None, None) => {}
                (a, b) => panic!(
                    "coverage mismatch for {}: engine {:?} reference {:?}",
                    query.scan_id,
                    a.is_some(),
                    b.is_some()
                ),
            }
        }
    }

    #[test]
    fn tau_invariant_to_count_scaling_and_permutation() {
        let log_t = 4.0f64.ln();
        let a = tau_from_counts(&[3, 1, 0, 2], log_t);
        let b = tau_from_counts(&[9, 3, 0, 6], log_t);
        let c = tau_from_counts(&[0, 2, 3, 1], log_t);
        assert_relative_eq!(a, b, epsilon = 1e-12);
        assert_relative_eq!(a, c, epsilon = 1e-12);
    }
}
