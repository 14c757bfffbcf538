//! Ray casting against planes and upright cuboids, with a counter-based
//! per-ray RNG so parallel casting stays bit-deterministic.

use serde::{Deserialize, Serialize};

use crate::geom::{self, Vec3};

/// Upright cuboid in the world frame: center, full dimensions, yaw
/// about the vertical axis.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Cuboid {
    pub center: Vec3,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl Cuboid {
    /// Nearest positive ray parameter where the ray enters the cuboid,
    /// by the slab method in the cuboid's local frame.
    pub fn ray_intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let (s, c) = self.yaw.sin_cos();
        let rel = geom::sub(origin, self.center);
        // World -> local: rotate by -yaw.
        let o = [c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1], rel[2]];
        let d = [c * dir[0] + s * dir[1], -s * dir[0] + c * dir[1], dir[2]];
        let half = [self.l / 2.0, self.w / 2.0, self.h / 2.0];
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for axis in 0..3 {
            if d[axis].abs() < 1e-15 {
                if o[axis].abs() > half[axis] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[axis];
            let mut t0 = (-half[axis] - o[axis]) * inv;
            let mut t1 = (half[axis] - o[axis]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_near = t_near.max(t0);
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
        if t_far < 0.0 {
            return None;
        }
        Some(if t_near >= 0.0 { t_near } else { t_far })
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let rel = geom::sub(p, self.center);
        let local = [c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1], rel[2]];
        local[0].abs() <= self.l / 2.0
            && local[1].abs() <= self.w / 2.0
            && local[2].abs() <= self.h / 2.0
    }
}

/// Infinite plane `n . x + d = 0`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub normal: Vec3,
    pub d: f64,
}

impl Default for PlaneSpec {
    fn default() -> Self {
        PlaneSpec {
            normal: [0.0, 0.0, 1.0],
            d: 0.0,
        }
    }
}

impl PlaneSpec {
    pub fn ray_intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let denom = geom::dot(self.normal, dir);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = -(geom::dot(self.normal, origin) + self.d) / denom;
        (t > 0.0).then_some(t)
    }

    /// Height of the plane surface at a horizontal position (requires a
    /// non-degenerate vertical normal component).
    pub fn surface_z(&self, x: f64, y: f64) -> f64 {
        (-self.d - self.normal[0] * x - self.normal[1] * y) / self.normal[2]
    }
}

/// SplitMix64 step; the standard 64-bit mix used as a counter RNG.
fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    *state = z ^ (z >> 31);
}

/// Deterministic per-ray standard normal draw keyed by (seed, ray id).
/// Box-Muller over two SplitMix64 outputs.
pub fn ray_normal(seed: u64, ray_id: u64) -> f64 {
    let mut state = seed ^ ray_id.wrapping_mul(0xA24BAED4963EE407);
    splitmix64(&mut state);
    let mut s1 = state;
    splitmix64(&mut s1);
    let u1 = ((state >> 11) as f64 + 1.0) / (1u64 << 53) as f64; // (0, 1]
    let u2 = (s1 >> 11) as f64 / (1u64 << 53) as f64; // [0, 1)
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Uniform draw in [0, 1) keyed by (seed, ray id), independent of
/// [`ray_normal`] for the same key.
pub fn ray_uniform(seed: u64, ray_id: u64) -> f64 {
    let mut state = seed ^ ray_id.wrapping_mul(0xD6E8FEB86659FD93) ^ 0x2545F4914F6CDD1D;
    splitmix64(&mut state);
    (state >> 11) as f64 / (1u64 << 53) as f64
}
