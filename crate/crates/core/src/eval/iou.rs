//! Rotated-box IoU in bird's-eye view and 3D.
//!
//! BEV intersection is exact convex polygon clipping
//! (Sutherland-Hodgman) followed by the shoelace area; 3D multiplies the
//! BEV intersection by the vertical overlap.

use crate::types::Bbox;

/// Clip convex polygon `subject` by convex polygon `clip` (both CCW).
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        // Signed distance to the (a, b) edge line; inside is the left
        // half-plane for a CCW clip polygon. Points on the edge count as
        // inside so that identical polygons clip to themselves exactly.
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        for j in 0..input.len() {
            let cur = input[j];
            let next = input[(j + 1) % input.len()];
            let s_cur = side(cur);
            let s_next = side(next);
            if s_cur >= 0.0 {
                output.push(cur);
                if s_next < 0.0 {
                    output.push(intersect(cur, next, s_cur, s_next));
                }
            } else if s_next >= 0.0 {
                output.push(intersect(cur, next, s_cur, s_next));
            }
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Shoelace area of a CCW polygon.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        twice += p[0] * q[1] - q[0] * p[1];
    }
    twice / 2.0
}

/// BEV footprint intersection area of two boxes.
pub fn bev_intersection_area(a: &Bbox, b: &Bbox) -> f64 {
    let poly = clip_convex(&a.bev_corners(), &b.bev_corners());
    let area = polygon_area(&poly);
    area.clamp(0.0, (a.l * a.w).min(b.l * b.w))
}

/// Intersection-over-union of the BEV footprints.
pub fn iou_bev(a: &Bbox, b: &Bbox) -> f64 {
    let inter = bev_intersection_area(a, b);
    let union = a.l * a.w + b.l * b.w - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Intersection-over-union of the 3D volumes: BEV intersection times
/// vertical overlap, over the volume union.
pub fn iou_3d(a: &Bbox, b: &Bbox) -> f64 {
    let overlap = (a.z_max().min(b.z_max()) - a.z_min().max(b.z_min())).max(0.0);
    let inter = bev_intersection_area(a, b) * overlap;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
