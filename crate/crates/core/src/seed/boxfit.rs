//! Upright box fitting: minimal-area rotated rectangle over the
//! ground-plane projection, vertical extent from heights above ground.

use crate::error::Result;
use crate::geom::{self, Vec3};
use crate::types::Bbox;

use super::ground::GroundPlane;

/// Width (and height) floor for degenerate clusters, meters.
const DEGENERATE_EXTENT: f64 = 0.05;

#[derive(Debug, Clone, Copy)]
pub struct FittedBox {
    pub bbox: Bbox,
    /// Minimum point height above the ground plane.
    pub height_min: f64,
    /// Maximum point height above the ground plane.
    pub height_max: f64,
    /// Set when the BEV footprint collapsed (collinear points) and an
    /// extent was clamped to a floor value.
    pub degenerate: bool,
}

/// Fit an upright box to `points`: project onto the ground plane, take
/// the minimal-area enclosing rotated rectangle of the projection
/// (rotating calipers over the convex hull), and read the vertical
/// extent from signed heights above the plane.
///
/// Yaw is the orientation of the rectangle's long side, modulo pi.
pub fn fit_box(points: &[Vec3], ground: &GroundPlane) -> Result<FittedBox> {
    assert!(points.len() >= 3, "box fitting needs at least 3 points");
    // In-plane orthonormal basis (u, v, normal). The normal is
    // near-vertical, so projecting the x axis onto the plane is stable.
    let n = ground.normal;
    let u = geom::normalize(geom::sub([1.0, 0.0, 0.0], geom::scale(n, n[0])));
    let v = geom::cross(n, u);

    let uv: Vec<[f64; 2]> = points
        .iter()
        .map(|&p| [geom::dot(p, u), geom::dot(p, v)])
        .collect();
    let mut height_min = f64::INFINITY;
    let mut height_max = f64::NEG_INFINITY;
    for &p in points {
        let h = ground.height_of(p);
        height_min = height_min.min(h);
        height_max = height_max.max(h);
    }

    let hull = convex_hull(&uv);
    let (rect, mut degenerate) = if hull.len() >= 3 {
        (min_area_rect(&hull), false)
    } else {
        (degenerate_rect(&uv), true)
    };
    let MinRect {
        center: [cu, cv],
        long_extent,
        short_extent,
        long_angle,
    } = rect;
    let (l, w) = (long_extent, short_extent.max(DEGENERATE_EXTENT));
    if short_extent < DEGENERATE_EXTENT {
        degenerate = true;
    }
    let (l, h) = (
        l.max(DEGENERATE_EXTENT),
        (height_max - height_min).max(DEGENERATE_EXTENT),
    );

    // Back to frame coordinates: center at the rectangle center, halfway
    // up the vertical extent. A point p decomposes as
    // (p.u) u + (p.v) v + (p.n) n with p.n = height - d.
    let mid_height = (height_min + height_max) / 2.0;
    let center = geom::add(
        geom::add(geom::scale(u, cu), geom::scale(v, cv)),
        geom::scale(n, mid_height - ground.d),
    );
    // Long-side direction in frame coordinates; yaw about the vertical.
    let dir = geom::add(
        geom::scale(u, long_angle.cos()),
        geom::scale(v, long_angle.sin()),
    );
    let yaw = dir[1].atan2(dir[0]);
    let bbox = Bbox::new(center, l, w, h, yaw, None)?;
    Ok(FittedBox {
        bbox,
        height_min,
        height_max,
        degenerate,
    })
}

struct MinRect {
    center: [f64; 2],
    long_extent: f64,
    short_extent: f64,
    /// Orientation of the long side.
    long_angle: f64,
}

/// Andrew's monotone chain; returns the hull counter-clockwise without
/// the closing point. Collinear inputs yield fewer than 3 vertices.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    // A fully collinear set collapses to its two extreme points.
    lower
}

/// Minimal-area enclosing rotated rectangle by rotating calipers: the
/// optimum is aligned with some hull edge.
fn min_area_rect(hull: &[[f64; 2]]) -> MinRect {
    let mut best: Option<(f64, MinRect)> = None;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let edge = [b[0] - a[0], b[1] - a[1]];
        let len = (edge[0] * edge[0] + edge[1] * edge[1]).sqrt();
        if len < 1e-12 {
            continue;
        }
        let dir = [edge[0] / len, edge[1] / len];
        let perp = [-dir[1], dir[0]];
        let (mut smin, mut smax) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for &p in hull {
            let s = p[0] * dir[0] + p[1] * dir[1];
            let t = p[0] * perp[0] + p[1] * perp[1];
            smin = smin.min(s);
            smax = smax.max(s);
            tmin = tmin.min(t);
            tmax = tmax.max(t);
        }
        let es = smax - smin;
        let et = tmax - tmin;
        let area = es * et;
        if best.as_ref().is_none_or(|(b, _)| area < *b) {
            let sc = (smin + smax) / 2.0;
            let tc = (tmin + tmax) / 2.0;
            let center = [
                sc * dir[0] + tc * perp[0],
                sc * dir[1] + tc * perp[1],
            ];
            let rect = if es >= et {
                MinRect {
                    center,
                    long_extent: es,
                    short_extent: et,
                    long_angle: dir[1].atan2(dir[0]),
                }
            } else {
                MinRect {
                    center,
                    long_extent: et,
                    short_extent: es,
                    long_angle: perp[1].atan2(perp[0]),
                }
            };
            best = Some((area, rect));
        }
    }
    best.expect("hull with >= 3 vertices has a non-degenerate edge").1
}

/// Rectangle for a collinear point set: span along the principal
/// direction, zero width (clamped by the caller).
fn degenerate_rect(points: &[[f64; 2]]) -> MinRect {
    let (mut lo, mut hi) = (points[0], points[0]);
    for &p in points {
        if p < lo {
            lo = p;
        }
        if p > hi {
            hi = p;
        }
    }
    let axis = [hi[0] - lo[0], hi[1] - lo[1]];
    let len = (axis[0] * axis[0] + axis[1] * axis[1]).sqrt();
    let dir = if len < 1e-12 {
        [1.0, 0.0]
    } else {
        [axis[0] / len, axis[1] / len]
    };
    MinRect {
        center: [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0],
        long_extent: len,
        short_extent: 0.0,
        long_angle: dir[1].atan2(dir[0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn flat_ground() -> GroundPlane {
        GroundPlane {
            normal: [0.0, 0.0, 1.0],
            d: 0.0,
            inlier_fraction: 1.0,
            fallback: false,
        }
    }

    fn rect_points(l: f64, w: f64, yaw: f64, z: f64) -> Vec<Vec3> {
        let (s, c) = yaw.sin_cos();
        [(l / 2.0, w / 2.0), (-l / 2.0, w / 2.0), (-l / 2.0, -w / 2.0), (l / 2.0, -w / 2.0)]
            .iter()
            .map(|&(a, b)| [c * a - s * b, s * a + c * b, z])
            .collect()
    }

    #[test]
    fn axis_aligned_rectangle() {
        let fit = fit_box(&rect_points(4.0, 2.0, 0.0, 1.0), &flat_ground()).unwrap();
        assert_relative_eq!(fit.bbox.l, 4.0, epsilon = 1e-9);
        assert_relative_eq!(fit.bbox.w, 2.0, epsilon = 1e-9);
        assert_relative_eq!(fit.bbox.yaw, 0.0, epsilon = 1e-9);
        assert!(!fit.degenerate);
    }

    #[test]
    fn rotated_rectangle() {
        let yaw = std::f64::consts::PI / 6.0;
        let fit = fit_box(&rect_points(4.0, 2.0, yaw, 0.5), &flat_ground()).unwrap();
        assert_relative_eq!(fit.bbox.l, 4.0, epsilon = 1e-6);
        assert_relative_eq!(fit.bbox.w, 2.0, epsilon = 1e-6);
        assert_relative_eq!(fit.bbox.yaw, yaw, epsilon = 1e-6);
    }

    #[test]
    fn vertical_extent_from_heights() {
        let mut points = rect_points(4.0, 2.0, 0.0, 0.3);
        points.extend(rect_points(4.0, 2.0, 0.0, 1.5));
        let fit = fit_box(&points, &flat_ground()).unwrap();
        assert_relative_eq!(fit.bbox.h, 1.2, epsilon = 1e-9);
        assert_relative_eq!(fit.bbox.cz, 0.9, epsilon = 1e-9);
        assert_relative_eq!(fit.height_min, 0.3, epsilon = 1e-12);
        assert_relative_eq!(fit.height_max, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn collinear_points_are_flagged_and_clamped() {
        let points: Vec<Vec3> = (0..10).map(|i| [i as f64 * 0.2, 0.0, 0.5]).collect();
        let fit = fit_box(&points, &flat_ground()).unwrap();
        assert!(fit.degenerate);
        assert_relative_eq!(fit.bbox.w, DEGENERATE_EXTENT);
        assert_relative_eq!(fit.bbox.l, 1.8, epsilon = 1e-9);
    }

    #[test]
    fn hull_of_square_with_interior_points() {
        let mut pts = vec![[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]];
        pts.push([1.0, 1.0]);
        pts.push([0.5, 1.5]);
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
    }

    #[test]
    fn tilted_ground_projection() {
        // Rectangle lying in a plane tilted 3 degrees about y: projecting
        // onto that plane recovers the in-plane footprint.
        let tilt = 3.0f64.to_radians();
        let normal = geom::normalize([-tilt.tan(), 0.0, 1.0]);
        let ground = GroundPlane {
            normal,
            d: 0.0,
            inlier_fraction: 1.0,
            fallback: false,
        };
        let u = geom::normalize(geom::sub([1.0, 0.0, 0.0], geom::scale(normal, normal[0])));
        let v = geom::cross(normal, u);
        let points: Vec<Vec3> = [(2.0, 1.0), (-2.0, 1.0), (-2.0, -1.0), (2.0, -1.0)]
            .iter()
            .map(|&(a, b)| {
                geom::add(
                    geom::add(geom::scale(u, a), geom::scale(v, b)),
                    geom::scale(normal, 0.8),
                )
            })
            .collect();
        let fit = fit_box(&points, &ground).unwrap();
        assert_relative_eq!(fit.bbox.l, 4.0, epsilon = 1e-9);
        assert_relative_eq!(fit.bbox.w, 2.0, epsilon = 1e-9);
        assert_relative_eq!(fit.height_min, 0.8, epsilon = 1e-9);
    }
}
