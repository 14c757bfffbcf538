//! Minimal 3D vector and rigid-transform math.
//!
//! Points and poses use `f64` throughout; scan files store `f32` and are
//! widened on load so that transform round-trips hold to 1e-9.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    scale(a, 1.0 / n)
}

pub fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// Normalize an angle into `[-pi/2, pi/2)`, i.e. modulo pi.
///
/// Box headings are ambiguous front-to-back, so yaw lives on the
/// half-open half circle.
pub fn normalize_yaw(yaw: f64) -> f64 {
    use std::f64::consts::PI;
    let mut y = yaw.rem_euclid(PI);
    if y >= PI / 2.0 {
        y -= PI;
    }
    y
}

/// Rigid world-from-sensor transform: `world = rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Row-major orthonormal rotation matrix with determinant +1.
    pub rotation: [[f64; 3]; 3],
    /// Translation in meters.
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, 0.0],
        }
    }

    /// Pose rotating about the vertical axis by `yaw`, then translating.
    pub fn from_yaw_translation(yaw: f64, translation: Vec3) -> Self {
        let (s, c) = yaw.sin_cos();
        Pose {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation,
        }
    }

    /// Build from a row-major 3x4 matrix, re-orthonormalizing small drift.
    ///
    /// Rejects matrices whose rotation part drifts from orthonormality by
    /// more than `1e-3` (max-abs element of `R^T R - I`) or has negative
    /// determinant (reflections are not valid sensor poses).
    pub fn from_rows_3x4(m: &[f64; 12]) -> Result<Self> {
        let rotation = [
            [m[0], m[1], m[2]],
            [m[4], m[5], m[6]],
            [m[8], m[9], m[10]],
        ];
        let translation = [m[3], m[7], m[11]];
        let drift = orthonormality_drift(&rotation);
        if drift > 1e-3 {
            return Err(Error::Validation(format!(
                "rotation drifts from orthonormal by {drift:.2e} (tolerance 1e-3)"
            )));
        }
        // Handedness check must precede re-orthonormalization: the
        // Gram-Schmidt cross product would silently restore det +1.
        if det3(&rotation) < 0.0 {
            return Err(Error::Validation(
                "rotation has determinant -1 (reflection)".into(),
            ));
        }
        let rotation = gram_schmidt(&rotation);
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.translation[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.translation[2],
        ]
    }

    /// Rotate a direction without translating.
    pub fn rotate(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
        ]
    }

    /// Composition: `(a.compose(b)).apply(p) == a.apply(b.apply(p))`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let a = &self.rotation;
        let b = &other.rotation;
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Pose {
            rotation,
            translation: self.apply(other.translation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let r = &self.rotation;
        // Transpose of an orthonormal matrix is its inverse.
        let rotation = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let t = self.translation;
        let translation = [
            -(rotation[0][0] * t[0] + rotation[0][1] * t[1] + rotation[0][2] * t[2]),
            -(rotation[1][0] * t[0] + rotation[1][1] * t[1] + rotation[1][2] * t[2]),
            -(rotation[2][0] * t[0] + rotation[2][1] * t[1] + rotation[2][2] * t[2]),
        ];
        Pose {
            rotation,
            translation,
        }
    }

    /// Max-abs deviation of `R^T R` from the identity.
    pub fn orthonormality_drift(&self) -> f64 {
        orthonormality_drift(&self.rotation)
    }

    /// Row-major 3x4 flattening (the pose text-file layout).
    pub fn to_rows_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], //
            r[1][0], r[1][1], r[1][2], t[1], //
            r[2][0], r[2][1], r[2][2], t[2],
        ]
    }
}

fn orthonormality_drift(r: &[[f64; 3]; 3]) -> f64 {
    let mut max = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let mut g = 0.0;
            for k in 0..3 {
                g += r[k][i] * r[k][j];
            }
            let target = if i == j { 1.0 } else { 0.0 };
            max = max.max((g - target).abs());
        }
    }
    max
}

fn det3(r: &[[f64; 3]; 3]) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

/// Re-orthonormalize rows by classical Gram-Schmidt.
fn gram_schmidt(r: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let r0 = normalize(r[0]);
    let mut r1 = sub(r[1], scale(r0, dot(r[1], r0)));
    r1 = normalize(r1);
    let r2 = cross(r0, r1);
    [r0, r1, r2]
}
