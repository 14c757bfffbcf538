//! RANSAC ground-plane estimation with a fixed-height fallback.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{self, Vec3};

/// Plane `n . x + d = 0` with unit, upward-pointing normal.
#[derive(Debug, Clone, Copy)]
pub struct GroundPlane {
    pub normal: Vec3,
    pub d: f64,
    pub inlier_fraction: f64,
    /// Set when RANSAC could not find a credible plane and the fixed
    /// sensor-height fallback was used instead.
    pub fallback: bool,
}

impl GroundPlane {
    /// Horizontal plane at `z = -sensor_height` (sensor-frame ground).
    pub fn fallback(sensor_height: f64) -> GroundPlane {
        GroundPlane {
            normal: [0.0, 0.0, 1.0],
            d: sensor_height,
            inlier_fraction: 0.0,
            fallback: true,
        }
    }

    /// Signed height of a point above the plane.
    pub fn height_of(&self, p: Vec3) -> f64 {
        geom::dot(self.normal, p) + self.d
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundConfig {
    /// Inlier distance threshold, meters.
    pub inlier_threshold: f64,
    /// RANSAC iterations.
    pub iterations: usize,
    /// Below this inlier fraction the fit is rejected in favor of the
    /// fallback plane.
    pub min_inlier_fraction: f64,
    /// Sensor height above ground for the fallback plane, meters.
    pub sensor_height: f64,
    /// Minimum vertical component of an acceptable plane normal.
    pub min_normal_z: f64,
    /// Seed for the deterministic sampler.
    pub seed: u64,
}

impl Default for GroundConfig {
    fn default() -> Self {
        GroundConfig {
            inlier_threshold: 0.15,
            iterations: 200,
            min_inlier_fraction: 0.2,
            sensor_height: 1.7,
            min_normal_z: 0.7,
            seed: 7,
        }
    }
}

const MIN_POINTS: usize = 50;

/// Fit a near-horizontal plane to `points` by seeded RANSAC, refined by
/// a least-squares fit on the winning inlier set. Falls back to
/// `z = -sensor_height` when there are too few points or too few
/// inliers.
pub fn estimate_ground(points: &[Vec3], cfg: &GroundConfig) -> GroundPlane {
    if points.len() < MIN_POINTS {
        return GroundPlane::fallback(cfg.sensor_height);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = points.len();
    let mut best: Option<(usize, Vec3, f64)> = None;
    for _ in 0..cfg.iterations {
        let a = points[rng.random_range(0..n)];
        let b = points[rng.random_range(0..n)];
        let c = points[rng.random_range(0..n)];
        let normal = geom::cross(geom::sub(b, a), geom::sub(c, a));
        let len = geom::norm(normal);
        if len < 1e-9 {
            continue; // degenerate (collinear or repeated) sample
        }
        let mut normal = geom::scale(normal, 1.0 / len);
        if normal[2] < 0.0 {
            normal = geom::scale(normal, -1.0);
        }
        if normal[2] <= cfg.min_normal_z {
            continue;
        }
        let d = -geom::dot(normal, a);
        let inliers = points
            .iter()
            .filter(|&&p| (geom::dot(normal, p) + d).abs() <= cfg.inlier_threshold)
            .count();
        if best.map_or(true, |(count, _, _)| inliers > count) {
            best = Some((inliers, normal, d));
        }
    }
    let Some((count, normal, d)) = best else {
        return GroundPlane::fallback(cfg.sensor_height);
    };
    let inlier_fraction = count as f64 / n as f64;
    if inlier_fraction < cfg.min_inlier_fraction {
        return GroundPlane::fallback(cfg.sensor_height);
    }
    let inliers: Vec<Vec3> = points
        .iter()
        .copied()
        .filter(|&p| (geom::dot(normal, p) + d).abs() <= cfg.inlier_threshold)
        .collect();
    let (refined_normal, refined_d) = least_squares_plane(&inliers).unwrap_or((normal, d));
    let (normal, d) = if refined_normal[2] > cfg.min_normal_z {
        (refined_normal, refined_d)
    } else {
        (normal, d)
    };
    GroundPlane {
        normal,
        d,
        inlier_fraction,
        fallback: false,
    }
}

/// Total-least-squares plane: centroid plus the smallest-eigenvalue
/// direction of the scatter matrix, oriented upward.
fn least_squares_plane(points: &[Vec3]) -> Option<(Vec3, f64)> {
    if points.len() < 3 {
        return None;
    }
    let inv_n = 1.0 / points.len() as f64;
    let mut centroid = [0.0; 3];
    for p in points {
        centroid = geom::add(centroid, *p);
    }
    centroid = geom::scale(centroid, inv_n);
    let mut cov = [[0.0f64; 3]; 3];
    for p in points {
        let d = geom::sub(*p, centroid);
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v *= inv_n;
        }
    }
    let mut normal = smallest_eigenvector_sym3(&cov)?;
    if normal[2] < 0.0 {
        normal = geom::scale(normal, -1.0);
    }
    let d = -geom::dot(normal, centroid);
    Some((normal, d))
}

/// Eigenvector of the smallest eigenvalue of a symmetric 3x3 matrix,
/// via cyclic Jacobi rotations.
fn smallest_eigenvector_sym3(m: &[[f64; 3]; 3]) -> Option<Vec3> {
    let mut a = *m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..32 {
        // Largest off-diagonal element.
        let (mut p, mut q, mut max) = (0, 1, a[0][1].abs());
        for (i, j) in [(0usize, 2usize), (1, 2)] {
            if a[i][j].abs() > max {
                p = i;
                q = j;
                max = a[i][j].abs();
            }
        }
        if max < 1e-14 {
            break;
        }
        let theta = 0.5 * (2.0 * a[p][q]).atan2(a[q][q] - a[p][p]);
        let (s, c) = theta.sin_cos();
        let mut r = [[1.0f64, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        r[p][p] = c;
        r[q][q] = c;
        r[p][q] = s;
        r[q][p] = -s;
        // a = r^T a r; v = v r
        let mut ar = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                ar[i][j] = (0..3).map(|k| a[i][k] * r[k][j]).sum();
            }
        }
        let mut rar = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rar[i][j] = (0..3).map(|k| r[k][i] * ar[k][j]).sum();
            }
        }
        a = rar;
        let mut vr = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                vr[i][j] = (0..3).map(|k| v[i][k] * r[k][j]).sum();
            }
        }
        v = vr;
    }
    let eigs = [a[0][0], a[1][1], a[2][2]];
    let min_idx = (0..3).min_by(|&i, &j| eigs[i].partial_cmp(&eigs[j]).unwrap())?;
    let out = [v[0][min_idx], v[1][min_idx], v[2][min_idx]];
    let len = geom::norm(out);
    (len > 1e-12).then(|| geom::scale(out, 1.0 / len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn noisy_ground(rng: &mut impl Rng, n: usize, sigma: f64, tilt: f64) -> Vec<Vec3> {
        // Plane through the origin tilted about the y axis by `tilt`.
        (0..n)
            .map(|_| {
                let x = rng.random_range(-20.0..20.0);
                let y = rng.random_range(-20.0..20.0);
                let noise = sigma * rng.random::<f64>().mul_add(2.0, -1.0);
                let z = x * tilt.tan() + noise;
                [x, y, z]
            })
            .collect()
    }

    fn angle_to(normal: Vec3, reference: Vec3) -> f64 {
        geom::dot(normal, reference).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn flat_ground_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points = noisy_ground(&mut rng, 2000, 0.02, 0.0);
        let plane = estimate_ground(&points, &GroundConfig::default());
        assert!(!plane.fallback);
        assert!(angle_to(plane.normal, [0.0, 0.0, 1.0]).to_degrees() < 1.0);
        assert!(plane.d.abs() < 0.05, "offset {}", plane.d);
    }

    #[test]
    fn tilted_ground_recovered() {
        let tilt = 3.0f64.to_radians();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let points = noisy_ground(&mut rng, 2000, 0.02, tilt);
        let plane = estimate_ground(&points, &GroundConfig::default());
        assert!(!plane.fallback);
        let true_normal = geom::normalize([-tilt.tan(), 0.0, 1.0]);
        assert!(
            angle_to(plane.normal, true_normal).to_degrees() < 1.0,
            "normal {:?}",
            plane.normal
        );
    }

    #[test]
    fn sparse_input_falls_back() {
        let points = vec![[0.0, 0.0, 0.0]; 10];
        let plane = estimate_ground(&points, &GroundConfig::default());
        assert!(plane.fallback);
        assert_eq!(plane.normal, [0.0, 0.0, 1.0]);
        assert_eq!(plane.d, 1.7);
        // Sensor-frame ground sits at z = -sensor_height.
        assert_eq!(plane.height_of([0.0, 0.0, -1.7]), 0.0);
    }

    #[test]
    fn no_planar_structure_falls_back() {
        // A vertical wall only: every sampled plane normal is horizontal,
        // so no near-horizontal candidate survives.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points: Vec<Vec3> = (0..500)
            .map(|_| {
                [
                    rng.random_range(-10.0..10.0),
                    0.0,
                    rng.random_range(0.0..5.0),
                ]
            })
            .collect();
        let plane = estimate_ground(&points, &GroundConfig::default());
        assert!(plane.fallback);
    }

    #[test]
    fn volumetric_clutter_falls_back() {
        // Points spread through a tall volume far above the true ground:
        // no 0.15 m slab holds 20% of them.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points: Vec<Vec3> = (0..1000)
            .map(|_| {
                [
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(2.0..12.0),
                ]
            })
            .collect();
        let plane = estimate_ground(&points, &GroundConfig::default());
        assert!(plane.fallback);
    }

    #[test]
    fn determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let points = noisy_ground(&mut rng, 1000, 0.05, 0.01);
        let a = estimate_ground(&points, &GroundConfig::default());
        let b = estimate_ground(&points, &GroundConfig::default());
        assert_eq!(a.normal, b.normal);
        assert_eq!(a.d, b.d);
    }
}
