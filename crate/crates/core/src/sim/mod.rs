//! Synthetic multi-traversal LiDAR worlds with exact ground truth.
//!
//! The simulator is the oracle for the end-to-end pipeline: worlds are
//! built from cuboids over a ground plane, mobile objects carry an
//! explicit per-traversal pose (or absence), and every emitted point
//! comes from nearest-hit ray casting with optional Gaussian range
//! noise. Identical (spec, seed) inputs produce byte-identical outputs.

pub mod presets;
pub mod raycast;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::io;
use crate::types::{Bbox, LabelKind, LabelSet, Point, Scan, Traversal};

pub use raycast::{Cuboid, PlaneSpec};

/// Spinning-sensor beam pattern and noise model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSpec {
    pub beams: usize,
    pub vfov_min_deg: f64,
    pub vfov_max_deg: f64,
    pub azimuth_resolution_deg: f64,
    pub azimuth_fov_deg: f64,
    pub max_range: f64,
    /// Gaussian range noise sigma, meters.
    pub noise_sigma: f64,
    /// Per-ray dropout probability.
    pub dropout: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec {
            beams: 64,
            vfov_min_deg: -25.0,
            vfov_max_deg: 3.0,
            azimuth_resolution_deg: 0.8,
            azimuth_fov_deg: 360.0,
            max_range: 80.0,
            noise_sigma: 0.02,
            dropout: 0.0,
        }
    }
}

/// Ego trajectory of one traversal: a waypoint polyline walked at a
/// fixed scan spacing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Route {
    pub waypoints: Vec<[f64; 2]>,
    /// Distance between consecutive scans, meters.
    pub scan_spacing: f64,
}

/// World pose of a mobile object in one traversal.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MobilePose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// A mobile object: fixed dimensions, explicit presence and pose per
/// traversal (`None` means absent from that traversal).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MobileObject {
    pub l: f64,
    pub w: f64,
    pub h: f64,
    /// Body clearance above the ground surface, meters.
    pub clearance: f64,
    pub per_traversal: Vec<Option<MobilePose>>,
}

impl MobileObject {
    fn cuboid(&self, pose: &MobilePose, ground: &PlaneSpec) -> Cuboid {
        let z = ground.surface_z(pose.x, pose.y) + self.clearance + self.h / 2.0;
        Cuboid {
            center: [pose.x, pose.y, z],
            l: self.l,
            w: self.w,
            h: self.h,
            yaw: pose.yaw,
        }
    }
}

/// Complete world description. The seed fixes all randomness.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub ground: PlaneSpec,
    pub statics: Vec<Cuboid>,
    pub mobiles: Vec<MobileObject>,
    /// One route per traversal.
    pub routes: Vec<Route>,
    pub sensor: SensorSpec,
    /// Sensor mount height above the ground surface, meters.
    pub sensor_height: f64,
    pub seed: u64,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.routes.is_empty() {
            return Err(Error::Config("world spec has zero routes".into()));
        }
        for route in &self.routes {
            if route.waypoints.len() < 2 {
                return Err(Error::Config("route needs at least two waypoints".into()));
            }
            if !(route.scan_spacing > 0.0) {
                return Err(Error::Config("scan spacing must be positive".into()));
            }
        }
        for m in &self.mobiles {
            if m.per_traversal.len() != self.routes.len() {
                return Err(Error::Config(format!(
                    "mobile object has {} presence entries for {} traversals",
                    m.per_traversal.len(),
                    self.routes.len()
                )));
            }
        }
        if self.sensor.beams == 0 || !(self.sensor.max_range > 0.0) {
            return Err(Error::Config("sensor needs beams and positive range".into()));
        }
        Ok(())
    }
}

/// Dataset manifest binding scan ids to traversals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub sensor_height: f64,
    pub traversals: Vec<ManifestTraversal>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestTraversal {
    pub traversal_id: String,
    pub scan_ids: Vec<String>,
}

#[derive(Debug)]
pub struct SimOutput {
    pub traversals: Vec<Traversal>,
    /// One ground-truth label set per scan: the mobile objects that
    /// received at least one ray hit in that scan, in sensor frame.
    pub ground_truth: Vec<LabelSet>,
    pub manifest: Manifest,
}

/// What a ray hit, for intensity tagging and ground-truth bookkeeping.
#[derive(Clone, Copy, PartialEq)]
enum HitKind {
    Ground,
    Static,
    Mobile(usize),
}

/// Cast the full beam pattern from every ego pose of every route.
pub fn simulate(spec: &WorldSpec) -> Result<SimOutput> {
    spec.validate()?;
    let mut traversals = Vec::new();
    let mut ground_truth = Vec::new();
    let mut manifest = Manifest {
        seed: spec.seed,
        sensor_height: spec.sensor_height,
        traversals: Vec::new(),
    };
    for (ti, route) in spec.routes.iter().enumerate() {
        let traversal_id = format!("t{ti}");
        let mobiles: Vec<(usize, Cuboid)> = spec
            .mobiles
            .iter()
            .enumerate()
            .filter_map(|(mi, m)| {
                m.per_traversal[ti]
                    .as_ref()
                    .map(|pose| (mi, m.cuboid(pose, &spec.ground)))
            })
            .collect();
        let ego_poses = route_poses(route, &spec.ground, spec.sensor_height);
        let scans: Vec<(Scan, LabelSet)> = ego_poses
            .par_iter()
            .enumerate()
            .map(|(si, pose)| {
                let scan_id = format!("{traversal_id}_{si:04}");
                let (points, hits) = cast_scan(spec, pose, &mobiles, ti as u64, si as u64);
                let gt = ground_truth_for(pose, &mobiles, &hits, &scan_id);
                (
                    Scan {
                        scan_id: scan_id.clone(),
                        traversal_id: traversal_id.clone(),
                        points,
                        pose: *pose,
                    },
                    gt,
                )
            })
            .collect();
        let mut traversal = Traversal {
            traversal_id: traversal_id.clone(),
            scans: Vec::with_capacity(scans.len()),
        };
        let mut scan_ids = Vec::with_capacity(scans.len());
        for (scan, gt) in scans {
            scan_ids.push(scan.scan_id.clone());
            traversal.scans.push(scan);
            ground_truth.push(gt);
        }
        manifest.traversals.push(ManifestTraversal {
            traversal_id,
            scan_ids,
        });
        traversals.push(traversal);
    }
    Ok(SimOutput {
        traversals,
        ground_truth,
        manifest,
    })
}

/// Ego poses along the route polyline: yaw-only rotations following the
/// segment heading, mounted `sensor_height` above the ground surface.
fn route_poses(route: &Route, ground: &PlaneSpec, sensor_height: f64) -> Vec<Pose> {
    let mut poses = Vec::new();
    let mut carry = 0.0f64;
    for pair in route.waypoints.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let seg = [b[0] - a[0], b[1] - a[1]];
        let seg_len = seg[0].hypot(seg[1]);
        if seg_len < 1e-12 {
            continue;
        }
        let heading = seg[1].atan2(seg[0]);
        let mut s = carry;
        while s <= seg_len {
            let x = a[0] + seg[0] * (s / seg_len);
            let y = a[1] + seg[1] * (s / seg_len);
            let z = ground.surface_z(x, y) + sensor_height;
            poses.push(Pose::from_yaw_translation(heading, [x, y, z]));
            s += route.scan_spacing;
        }
        carry = s - seg_len;
    }
    poses
}

fn cast_scan(
    spec: &WorldSpec,
    pose: &Pose,
    mobiles: &[(usize, Cuboid)],
    traversal_idx: u64,
    scan_idx: u64,
) -> (Vec<Point>, Vec<usize>) {
    let sensor = &spec.sensor;
    let origin = pose.translation;
    let azimuth_steps = (sensor.azimuth_fov_deg / sensor.azimuth_resolution_deg).round() as u64;
    let mut points = Vec::new();
    let mut hit_counts = vec![0usize; spec.mobiles.len()];
    let scan_key = (traversal_idx << 40) ^ (scan_idx << 24);
    for beam in 0..sensor.beams as u64 {
        let elevation = if sensor.beams == 1 {
            sensor.vfov_min_deg
        } else {
            sensor.vfov_min_deg
                + (sensor.vfov_max_deg - sensor.vfov_min_deg) * beam as f64
                    / (sensor.beams as f64 - 1.0)
        }
        .to_radians();
        for step in 0..azimuth_steps {
            let azimuth =
                (step as f64 * sensor.azimuth_resolution_deg - sensor.azimuth_fov_deg / 2.0)
                    .to_radians();
            let (se, ce) = elevation.sin_cos();
            let (sa, ca) = azimuth.sin_cos();
            let dir_sensor = [ce * ca, ce * sa, se];
            let dir_world = pose.rotate(dir_sensor);
            let mut nearest: Option<(f64, HitKind)> = None;
            if let Some(t) = spec.ground.ray_intersect(origin, dir_world) {
                nearest = Some((t, HitKind::Ground));
            }
            for cuboid in &spec.statics {
                if let Some(t) = cuboid.ray_intersect(origin, dir_world) {
                    if nearest.is_none_or(|(n, _)| t < n) {
                        nearest = Some((t, HitKind::Static));
                    }
                }
            }
            for &(mi, ref cuboid) in mobiles {
                if let Some(t) = cuboid.ray_intersect(origin, dir_world) {
                    if nearest.is_none_or(|(n, _)| t < n) {
                        nearest = Some((t, HitKind::Mobile(mi)));
                    }
                }
            }
            let Some((t, kind)) = nearest else {
                continue;
            };
            if t > sensor.max_range {
                continue;
            }
            let ray_id = scan_key ^ (beam * azimuth_steps + step);
            if sensor.dropout > 0.0 && raycast::ray_uniform(spec.seed, ray_id) < sensor.dropout {
                continue;
            }
            let t = if sensor.noise_sigma > 0.0 {
                (t + sensor.noise_sigma * raycast::ray_normal(spec.seed, ray_id)).max(0.05)
            } else {
                t
            };
            let intensity = match kind {
                HitKind::Ground => 0.3,
                HitKind::Static => 0.6,
                HitKind::Mobile(mi) => {
                    hit_counts[mi] += 1;
                    0.8
                }
            };
            points.push(Point {
                x: dir_sensor[0] * t,
                y: dir_sensor[1] * t,
                z: dir_sensor[2] * t,
                intensity,
            });
        }
    }
    (points, hit_counts)
}

/// Sensor-frame ground-truth boxes for the mobile objects with at least
/// one return in this scan. Ego poses are yaw-only, so transforming an
/// upright world box into the sensor frame is exact.
fn ground_truth_for(
    pose: &Pose,
    mobiles: &[(usize, Cuboid)],
    hit_counts: &[usize],
    scan_id: &str,
) -> LabelSet {
    let inv = pose.inverse();
    let ego_yaw = pose.rotation[1][0].atan2(pose.rotation[0][0]);
    let boxes: Vec<Bbox> = mobiles
        .iter()
        .filter(|(mi, _)| hit_counts[*mi] > 0)
        .map(|(_, cuboid)| {
            let center = inv.apply(cuboid.center);
            Bbox::new(
                center,
                cuboid.l,
                cuboid.w,
                cuboid.h,
                cuboid.yaw - ego_yaw,
                None,
            )
            .expect("simulated cuboids are valid boxes")
        })
        .collect();
    LabelSet::new(scan_id, LabelKind::GroundTruth, boxes)
}

/// Directory layout written by the `sim` subcommand:
///
/// ```text
/// out/
///   manifest.json
///   gt_labels.jsonl
///   traversals/<tid>/poses.txt
///   traversals/<tid>/scans/<scan_id>.bin
/// ```
pub fn write_dataset(dir: impl AsRef<Path>, output: &SimOutput) -> Result<()> {
    let dir = dir.as_ref();
    let manifest_json = serde_json::to_vec_pretty(&output.manifest)
        .map_err(|e| Error::Internal(format!("manifest serialization failed: {e}")))?;
    io::atomic_write(&dir.join("manifest.json"), &manifest_json)?;
    io::write_labels(dir.join("gt_labels.jsonl"), &output.ground_truth)?;
    for traversal in &output.traversals {
        let tdir = dir.join("traversals").join(&traversal.traversal_id);
        let poses: Vec<(&str, &Pose)> = traversal
            .scans
            .iter()
            .map(|s| (s.scan_id.as_str(), &s.pose))
            .collect();
        io::write_poses(tdir.join("poses.txt"), poses)?;
        for scan in &traversal.scans {
            io::write_scan(
                tdir.join("scans").join(format!("{}.bin", scan.scan_id)),
                &scan.points,
            )?;
        }
    }
    Ok(())
}

/// Load a dataset written by [`write_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Vec<Traversal>, Manifest)> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&io::read_to_string(&manifest_path)?)
        .map_err(|e| Error::Parse {
            path: manifest_path.clone(),
            line: None,
            msg: e.to_string(),
        })?;
    let mut traversals = Vec::new();
    for entry in &manifest.traversals {
        let tdir = dir.join("traversals").join(&entry.traversal_id);
        let poses = io::load_poses(tdir.join("poses.txt"))?;
        let mut scans = Vec::with_capacity(entry.scan_ids.len());
        for scan_id in &entry.scan_ids {
            let pose = *poses.get(scan_id).ok_or_else(|| Error::Validation(format!(
                "scan `{scan_id}` listed in manifest but missing from poses.txt of `{}`",
                entry.traversal_id
            )))?;
            let path = tdir.join("scans").join(format!("{scan_id}.bin"));
            scans.push(io::load_scan(&path, pose, scan_id, &entry.traversal_id)?);
        }
        let traversal = Traversal {
            traversal_id: entry.traversal_id.clone(),
            scans,
        };
        traversal.validate()?;
        traversals.push(traversal);
    }
    Ok((traversals, manifest))
}

/// Ground-truth label sets keyed by frame id.
pub fn gt_by_frame(gt: &[LabelSet]) -> BTreeMap<&str, &LabelSet> {
    gt.iter().map(|ls| (ls.frame_id.as_str(), ls)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{self, Vec3};
    use approx::assert_relative_eq;

    fn single_ray_spec(noise_sigma: f64) -> WorldSpec {
        WorldSpec {
            ground: PlaneSpec::default(),
            statics: vec![],
            mobiles: vec![],
            routes: vec![Route {
                waypoints: vec![[0.0, 0.0], [1.0, 0.0]],
                scan_spacing: 10.0,
            }],
            sensor: SensorSpec {
                beams: 1,
                vfov_min_deg: -90.0,
                vfov_max_deg: -90.0,
                azimuth_resolution_deg: 360.0,
                azimuth_fov_deg: 360.0,
                max_range: 80.0,
                noise_sigma,
                dropout: 0.0,
            },
            sensor_height: 1.7,
            seed: 1,
        }
    }

    #[test]
    fn straight_down_ray_measures_sensor_height() {
        let out = simulate(&single_ray_spec(0.0)).unwrap();
        let scan = &out.traversals[0].scans[0];
        assert_eq!(scan.points.len(), 1);
        let p = &scan.points[0];
        let range = (p.x * p.x + p.y * p.y + p.z * p.z).sqrt();
        assert_relative_eq!(range, 1.7, epsilon = 1e-9);
        assert_relative_eq!(p.z, -1.7, epsilon = 1e-9);
    }

    #[test]
    fn ray_toward_cuboid_face_measures_distance() {
        let mut spec = single_ray_spec(0.0);
        spec.sensor.vfov_min_deg = 0.0;
        spec.sensor.vfov_max_deg = 0.0;
        spec.sensor.azimuth_resolution_deg = 360.0;
        // One ray along -x (azimuth -180 from the fov center).
        spec.statics.push(Cuboid {
            center: [-11.0, 0.0, 1.7],
            l: 2.0,
            w: 4.0,
            h: 2.0,
            yaw: 0.0,
        });
        let out = simulate(&spec).unwrap();
        let scan = &out.traversals[0].scans[0];
        assert_eq!(scan.points.len(), 1);
        assert_relative_eq!(scan.points[0].x, -10.0, epsilon = 1e-9);
    }

    #[test]
    fn noiseless_points_lie_on_surfaces() {
        let mut spec = presets::make_benchmark("separation", 3).unwrap();
        spec.sensor.noise_sigma = 0.0;
        for route in &mut spec.routes {
            route.scan_spacing = 40.0; // keep the test fast
        }
        let out = simulate(&spec).unwrap();
        let mobile_cuboids: Vec<Vec<Cuboid>> = (0..spec.routes.len())
            .map(|ti| {
                spec.mobiles
                    .iter()
                    .filter_map(|m| m.per_traversal[ti].as_ref().map(|p| m.cuboid(p, &spec.ground)))
                    .collect()
            })
            .collect();
        let mut checked = 0;
        for (ti, traversal) in out.traversals.iter().enumerate() {
            for scan in &traversal.scans {
                for p in scan.points.iter().step_by(97) {
                    let w = scan.pose.apply(p.xyz());
                    let mut d = (geom::dot(spec.ground.normal, w) + spec.ground.d).abs();
                    for c in spec.statics.iter().chain(&mobile_cuboids[ti]) {
                        d = d.min(cuboid_surface_distance(c, w));
                    }
                    assert!(d < 1e-9, "point {w:?} is {d} off every surface");
                    checked += 1;
                }
            }
        }
        assert!(checked > 100);
    }

    fn cuboid_surface_distance(c: &Cuboid, p: Vec3) -> f64 {
        let (s, co) = c.yaw.sin_cos();
        let rel = geom::sub(p, c.center);
        let local = [
            co * rel[0] + s * rel[1],
            -s * rel[0] + co * rel[1],
            rel[2],
        ];
        let half = [c.l / 2.0, c.w / 2.0, c.h / 2.0];
        // Distance to the boundary of the box (inside: distance to the
        // nearest face; outside: distance to the box).
        let mut outside = [0.0f64; 3];
        let mut max_inside = f64::NEG_INFINITY;
        for i in 0..3 {
            outside[i] = (local[i].abs() - half[i]).max(0.0);
            max_inside = max_inside.max(local[i].abs() - half[i]);
        }
        let d_out = (outside[0] * outside[0] + outside[1] * outside[1] + outside[2] * outside[2])
            .sqrt();
        if d_out > 0.0 {
            d_out
        } else {
            -max_inside
        }
    }

    #[test]
    fn ground_truth_boxes_have_returns_inside() {
        let spec = presets::make_benchmark("separation", 7).unwrap();
        let out = simulate(&spec).unwrap();
        let scans: BTreeMap<&str, &Scan> = out
            .traversals
            .iter()
            .flat_map(|t| t.scans.iter())
            .map(|s| (s.scan_id.as_str(), s))
            .collect();
        let mut gt_boxes = 0;
        for gt in &out.ground_truth {
            let scan = scans[gt.frame_id.as_str()];
            for b in &gt.boxes {
                // The box is exact; noise can push returns slightly out,
                // so test with a small margin.
                let grown = Bbox::new(
                    [b.cx, b.cy, b.cz],
                    b.l + 0.3,
                    b.w + 0.3,
                    b.h + 0.3,
                    b.yaw,
                    None,
                )
                .unwrap();
                let inside = scan.points.iter().filter(|p| grown.contains(p.xyz())).count();
                assert!(inside >= 1, "GT box in {} has no returns", gt.frame_id);
                gt_boxes += 1;
            }
        }
        assert!(gt_boxes > 0, "benchmark produced no ground truth at all");
    }

    #[test]
    fn determinism_byte_identical() {
        let spec = presets::make_benchmark("separation", 9).unwrap();
        let mut spec_small = spec.clone();
        for route in &mut spec_small.routes {
            route.scan_spacing = 30.0;
        }
        let a = simulate(&spec_small).unwrap();
        let b = simulate(&spec_small).unwrap();
        for (ta, tb) in a.traversals.iter().zip(&b.traversals) {
            for (sa, sb) in ta.scans.iter().zip(&tb.scans) {
                assert_eq!(sa.points, sb.points);
            }
        }
        assert_eq!(a.ground_truth.len(), b.ground_truth.len());
        for (ga, gb) in a.ground_truth.iter().zip(&b.ground_truth) {
            assert_eq!(ga, gb);
        }
    }

    #[test]
    fn zero_routes_is_an_error() {
        let mut spec = single_ray_spec(0.0);
        spec.routes.clear();
        assert!(simulate(&spec).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = presets::make_benchmark("separation", 5).unwrap();
        for route in &mut spec.routes {
            route.scan_spacing = 45.0;
        }
        let out = simulate(&spec).unwrap();
        write_dataset(dir.path(), &out).unwrap();
        let (traversals, manifest) = load_dataset(dir.path()).unwrap();
        assert_eq!(manifest.traversals.len(), out.manifest.traversals.len());
        assert_eq!(traversals.len(), out.traversals.len());
        for (loaded, original) in traversals.iter().zip(&out.traversals) {
            assert_eq!(loaded.scans.len(), original.scans.len());
            for (ls, os) in loaded.scans.iter().zip(&original.scans) {
                assert_eq!(ls.scan_id, os.scan_id);
                assert_eq!(ls.points.len(), os.points.len());
                // Binary scan storage is f32; poses round-trip via text.
                for (lp, op) in ls.points.iter().zip(&os.points).step_by(53) {
                    assert_relative_eq!(lp.x, op.x, epsilon = 1e-4);
                    assert_relative_eq!(lp.z, op.z, epsilon = 1e-4);
                }
                for i in 0..3 {
                    assert_relative_eq!(
                        ls.pose.translation[i],
                        os.pose.translation[i],
                        epsilon = 1e-9
                    );
                }
            }
        }
    }
}
