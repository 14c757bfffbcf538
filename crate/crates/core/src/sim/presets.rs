//! Benchmark world presets.
//!
//! Three stress patterns, all on a straight street with buildings and
//! poles as persistent structure:
//!
//! - `separation`: every car is present in exactly one of four
//!   traversals, the cleanest possible ephemerality signal.
//! - `parked`: movers on a shared segment plus parked cars on a tail
//!   segment only one traversal visits, and static car-sized clutter.
//!   Exercises self-training recovery and pseudo-label filtering.
//! - `dense`: adds a floating blob, flat road debris, and an oversized
//!   trailer, all ephemeral, to exercise the common-sense box filters.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{Cuboid, MobileObject, MobilePose, PlaneSpec, Route, SensorSpec, WorldSpec};

const CAR_DIMS: [f64; 3] = [4.2, 1.9, 1.5];
const CAR_CLEARANCE: f64 = 0.35;

/// Build one of the named benchmark worlds. The seed fixes object
/// placement jitter and the simulation noise stream.
pub fn make_benchmark(preset: &str, seed: u64) -> Result<WorldSpec> {
    match preset {
        "separation" => Ok(separation(seed)),
        "parked" => Ok(parked(seed)),
        "dense" => Ok(dense(seed)),
        other => Err(Error::Config(format!(
            "unknown preset `{other}` (expected separation, parked, or dense)"
        ))),
    }
}

fn street_statics(x_from: f64, x_to: f64) -> Vec<Cuboid> {
    let mut statics = Vec::new();
    let mut x = x_from + 12.0;
    while x < x_to {
        for side in [-1.0, 1.0] {
            statics.push(Cuboid {
                center: [x, side * 16.0, 4.0],
                l: 12.0,
                w: 8.0,
                h: 8.0,
                yaw: 0.0,
            });
        }
        x += 30.0;
    }
    let mut x = x_from + 5.0;
    while x < x_to {
        for side in [-1.0, 1.0] {
            statics.push(Cuboid {
                center: [x, side * 8.0, 2.25],
                l: 0.3,
                w: 0.3,
                h: 4.5,
                yaw: 0.0,
            });
        }
        x += 21.0;
    }
    statics
}

/// A car-shaped mobile object present only in `traversal` of `total`.
fn one_shot_car(
    rng: &mut ChaCha8Rng,
    traversal: usize,
    total: usize,
    x: f64,
    side: f64,
) -> MobileObject {
    let pose = MobilePose {
        x: x + rng.random_range(-1.0..1.0),
        y: side * rng.random_range(3.5..5.5),
        yaw: rng.random_range(0.5..1.1) * if rng.random::<bool>() { 1.0 } else { -1.0 },
    };
    let mut per_traversal = vec![None; total];
    per_traversal[traversal] = Some(pose);
    MobileObject {
        l: CAR_DIMS[0],
        w: CAR_DIMS[1],
        h: CAR_DIMS[2],
        clearance: CAR_CLEARANCE,
        per_traversal,
    }
}

fn base_spec(routes: Vec<Route>, seed: u64) -> WorldSpec {
    WorldSpec {
        ground: PlaneSpec::default(),
        statics: Vec::new(),
        mobiles: Vec::new(),
        routes,
        sensor: SensorSpec::default(),
        sensor_height: 1.7,
        seed,
    }
}

fn straight_route(x_from: f64, x_to: f64) -> Route {
    Route {
        waypoints: vec![[x_from, 0.0], [x_to, 0.0]],
        scan_spacing: 2.0,
    }
}

fn separation(seed: u64) -> WorldSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traversals = 4;
    let mut spec = base_spec(vec![straight_route(0.0, 98.0); traversals], seed);
    spec.statics = street_statics(0.0, 98.0);
    // Twelve cars, one per slot along the street, each present in
    // exactly one traversal (round-robin).
    for (i, slot) in (0..12).enumerate() {
        let x = 10.0 + slot as f64 * 7.0;
        let side = if i % 2 == 0 { 1.0 } else { -1.0 };
        spec.mobiles
            .push(one_shot_car(&mut rng, i % traversals, traversals, x, side));
    }
    spec
}

fn parked(seed: u64) -> WorldSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70AD);
    let traversals = 4;
    // Traversal 0 continues onto a tail segment the others never visit,
    // so frames there have no multi-traversal coverage.
    let mut routes = vec![straight_route(0.0, 128.0)];
    routes.extend(vec![straight_route(0.0, 70.0); traversals - 1]);
    let mut spec = base_spec(routes, seed);
    spec.statics = street_statics(0.0, 128.0);
    // Car-sized static clutter on the shared segment: persistent, so
    // PP filtering should strip the detections it attracts.
    for (i, &x) in [14.0, 31.0, 47.0, 63.0].iter().enumerate() {
        let side = if i % 2 == 0 { -1.0 } else { 1.0 };
        spec.statics.push(Cuboid {
            center: [x, side * 4.5, 0.3 + 0.75],
            l: 4.0,
            w: 2.0,
            h: 1.5,
            yaw: 0.15 * (i as f64 - 1.5),
        });
    }
    // Movers: one-traversal cars on the shared segment.
    for (i, slot) in (0..8).enumerate() {
        let x = 9.0 + slot as f64 * 7.5;
        let side = if i % 2 == 0 { 1.0 } else { -1.0 };
        spec.mobiles
            .push(one_shot_car(&mut rng, i % traversals, traversals, x, side));
    }
    // Parked cars: identical pose in every traversal. Most live on the
    // tail segment; one sits on the shared segment where PP coverage
    // exists (and will mark it persistent).
    let mut parked_slots: Vec<(f64, f64)> = (0..6)
        .map(|i| (78.0 + i as f64 * 8.0, if i % 2 == 0 { 1.0 } else { -1.0 }))
        .collect();
    parked_slots.push((55.0, -1.0));
    for (x, side) in parked_slots {
        let pose = MobilePose {
            x: x + rng.random_range(-1.0..1.0),
            y: side * rng.random_range(3.5..5.0),
            yaw: rng.random_range(-0.15..0.15),
        };
        spec.mobiles.push(MobileObject {
            l: CAR_DIMS[0],
            w: CAR_DIMS[1],
            h: CAR_DIMS[2],
            clearance: CAR_CLEARANCE,
            per_traversal: vec![Some(pose); traversals],
        });
    }
    spec
}

fn dense(seed: u64) -> WorldSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDE5E);
    let traversals = 4;
    let mut spec = base_spec(vec![straight_route(0.0, 98.0); traversals], seed);
    spec.statics = street_statics(0.0, 98.0);
    for (i, slot) in (0..8).enumerate() {
        let x = 10.0 + slot as f64 * 10.0;
        let side = if i % 2 == 0 { 1.0 } else { -1.0 };
        spec.mobiles
            .push(one_shot_car(&mut rng, i % traversals, traversals, x, side));
    }
    // Ephemeral junk that must be caught by the common-sense filters:
    // a floating blob (a tarp caught in the wind), flat debris on the
    // road, and an oversized trailer. All appear in traversal 0 only.
    let junk = [
        // (l, w, h, clearance, x, y, yaw)
        (1.5, 1.5, 1.0, 2.5, 25.0, -3.0, 0.4),
        (2.5, 1.8, 0.2, 0.0, 45.0, 2.0, -0.2),
        (16.0, 3.2, 4.0, 0.3, 70.0, 6.5, 0.05),
    ];
    for (l, w, h, clearance, x, y, yaw) in junk {
        let mut per_traversal = vec![None; traversals];
        per_traversal[0] = Some(MobilePose { x, y, yaw });
        spec.mobiles.push(MobileObject {
            l,
            w,
            h,
            clearance,
            per_traversal,
        });
    }
    spec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_deterministic() {
        for preset in ["separation", "parked", "dense"] {
            let a = make_benchmark(preset, 7).unwrap();
            let b = make_benchmark(preset, 7).unwrap();
            assert_eq!(
                serde_json::to_string(&a).unwrap(),
                serde_json::to_string(&b).unwrap(),
                "{preset} spec not deterministic"
            );
        }
    }

    #[test]
    fn unknown_preset_rejected() {
        assert!(make_benchmark("bogus", 1).is_err());
    }

    #[test]
    fn separation_has_four_traversals_and_single_presence() {
        let spec = make_benchmark("separation", 7).unwrap();
        assert_eq!(spec.routes.len(), 4);
        for m in &spec.mobiles {
            assert_eq!(m.per_traversal.iter().filter(|p| p.is_some()).count(), 1);
        }
    }

    #[test]
    fn parked_has_objects_present_in_all_traversals() {
        let spec = make_benchmark("parked", 7).unwrap();
        let always = spec
            .mobiles
            .iter()
            .filter(|m| m.per_traversal.iter().all(|p| p.is_some()))
            .count();
        assert!(always >= 1, "parked preset needs always-present objects");
        // And the tail segment belongs to traversal 0 alone.
        let t0_len = spec.routes[0].waypoints[1][0];
        assert!(spec.routes[1..]
            .iter()
            .all(|r| r.waypoints[1][0] < t0_len));
    }
}
