//! Core data model: points, scans, traversals, boxes, label sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Pose, Vec3};

/// One LiDAR return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Reflectance in `[0, 1]`, clamped on load. Carried through I/O but
    /// not consumed by any algorithm in this crate.
    pub intensity: f32,
}

impl Point {
    pub fn xyz(&self) -> Vec3 {
        [self.x, self.y, self.z]
    }
}

/// One LiDAR sweep: sensor-frame points plus the world-from-sensor pose.
#[derive(Debug, Clone)]
pub struct Scan {
    pub scan_id: String,
    pub traversal_id: String,
    pub points: Vec<Point>,
    pub pose: Pose,
}

impl Scan {
    /// Ego position of the sensor in the world frame.
    pub fn ego_position(&self) -> Vec3 {
        self.pose.translation
    }

    /// Transform all points into the world frame.
    pub fn to_world(&self) -> Vec<Vec3> {
        self.points
            .iter()
            .map(|p| self.pose.apply(p.xyz()))
            .collect()
    }
}

/// One driving session over a route: scans ordered by acquisition.
#[derive(Debug, Clone)]
pub struct Traversal {
    pub traversal_id: String,
    pub scans: Vec<Scan>,
}

impl Traversal {
    /// Check that scan ids are unique within the traversal.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for scan in &self.scans {
            if !seen.insert(scan.scan_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate scan_id `{}` in traversal `{}`",
                    scan.scan_id, self.traversal_id
                )));
            }
        }
        Ok(())
    }
}

/// Upright 3D bounding box.
///
/// `yaw` rotates the box footprint about the vertical axis and is
/// normalized to `[-pi/2, pi/2)`; headings are deliberately ambiguous
/// front-to-back. The canonical form keeps `l >= w` (swapping the
/// footprint axes is a quarter-turn of the same box).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
    /// Detection confidence in `[0, 1]`; absent for ground truth and seeds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Bbox {
    /// Construct with validation and canonicalization (`l >= w`, yaw mod pi).
    pub fn new(center: Vec3, l: f64, w: f64, h: f64, yaw: f64, score: Option<f64>) -> Result<Bbox> {
        let mut b = Bbox {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            l,
            w,
            h,
            yaw,
            score,
        };
        b.canonicalize();
        b.validate()?;
        Ok(b)
    }

    pub fn center(&self) -> Vec3 {
        [self.cx, self.cy, self.cz]
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    /// BEV distance of the box center from the frame origin.
    pub fn bev_range(&self) -> f64 {
        self.cx.hypot(self.cy)
    }

    /// BEV footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.l / 2.0;
        let hw = self.w / 2.0;
        let mut out = [[0.0; 2]; 4];
        for (i, (dl, dw)) in [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
            .into_iter()
            .enumerate()
        {
            out[i] = [self.cx + c * dl - s * dw, self.cy + s * dl + c * dw];
        }
        out
    }

    pub fn z_min(&self) -> f64 {
        self.cz - self.h / 2.0
    }

    pub fn z_max(&self) -> f64 {
        self.cz + self.h / 2.0
    }

    /// Strict-interior BEV test, closed interval vertically.
    pub fn contains(&self, p: Vec3) -> bool {
        if p[2] < self.z_min() || p[2] > self.z_max() {
            return false;
        }
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.cx;
        let dy = p[1] - self.cy;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        u.abs() < self.l / 2.0 && v.abs() < self.w / 2.0
    }

    fn canonicalize(&mut self) {
        if self.w > self.l {
            std::mem::swap(&mut self.l, &mut self.w);
            self.yaw += std::f64::consts::FRAC_PI_2;
        }
        self.yaw = geom::normalize_yaw(self.yaw);
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("l", self.l), ("w", self.w), ("h", self.h)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Validation(format!(
                    "box dimension {name} must be positive and finite, got {v}"
                )));
            }
        }
        for (name, v) in [("cx", self.cx), ("cy", self.cy), ("cz", self.cz), ("yaw", self.yaw)] {
            if !v.is_finite() {
                return Err(Error::Validation(format!("box field {name} is not finite")));
            }
        }
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Validation(format!(
                    "box score must lie in [0, 1], got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Provenance of a label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Seed,
    Pseudo,
    Detection,
    GroundTruth,
}

impl std::fmt::Display for LabelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LabelKind::Seed => "seed",
            LabelKind::Pseudo => "pseudo",
            LabelKind::Detection => "detection",
            LabelKind::GroundTruth => "ground_truth",
        };
        f.write_str(s)
    }
}

/// Per-frame collection of boxes (sensor frame of that scan).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    #[serde(rename = "frame")]
    pub frame_id: String,
    pub kind: LabelKind,
    pub boxes: Vec<Bbox>,
}

impl LabelSet {
    pub fn new(frame_id: impl Into<String>, kind: LabelKind, boxes: Vec<Bbox>) -> Self {
        LabelSet {
            frame_id: frame_id.into(),
            kind,
            boxes,
        }
    }
}
