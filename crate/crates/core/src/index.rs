//! Fixed-radius counting and k-nearest-neighbor queries over a voxel
//! hash grid.
//!
//! The grid is the single spatial backend: the dominant workload is
//! radius counting at a fixed small radius, where an integer cell hash
//! gives O(1) expected lookup. The grid is immutable after build and
//! safe to query concurrently.

use std::collections::HashMap;

use crate::geom::{dist2, Vec3};

/// Uniform voxel hash grid over a point set.
///
/// Cell coordinate of a point is `floor(coord / cell_size)` per axis.
#[derive(Debug)]
pub struct VoxelGrid {
    cell_size: f64,
    cells: HashMap<[i32; 3], Vec<u32>>,
    points: Vec<Vec3>,
}

impl VoxelGrid {
    /// Build a grid over `points`. Empty input yields a valid empty grid.
    ///
    /// # Panics
    /// If `cell_size` is not strictly positive or a coordinate is not finite.
    pub fn build(points: Vec<Vec3>, cell_size: f64) -> VoxelGrid {
        assert!(
            cell_size > 0.0 && cell_size.is_finite(),
            "cell_size must be positive and finite, got {cell_size}"
        );
        let mut cells: HashMap<[i32; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            assert!(
                p.iter().all(|c| c.is_finite()),
                "point {i} has a non-finite coordinate"
            );
            cells.entry(cell_of(*p, cell_size)).or_default().push(i as u32);
        }
        VoxelGrid {
            cell_size,
            cells,
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Count points with `||p - q|| < r` (strictly).
    ///
    /// # Panics
    /// If `r <= 0` or the grid was built with `cell_size > r`; a coarser
    /// grid than the query radius is a caller contract violation.
    pub fn count_within(&self, q: Vec3, r: f64) -> usize {
        assert!(r > 0.0, "radius must be positive, got {r}");
        assert!(
            self.cell_size <= r,
            "count_within requires cell_size <= r (cell_size {}, r {r})",
            self.cell_size
        );
        let r2 = r * r;
        let mut count = 0;
        self.for_each_candidate(q, r, |p| {
            if dist2(p, q) < r2 {
                count += 1;
            }
        });
        count
    }

    /// Count points with `||p - q|| < r` whose index also satisfies
    /// `pred`. Same contract as [`VoxelGrid::count_within`].
    pub fn count_within_where(&self, q: Vec3, r: f64, pred: impl Fn(u32) -> bool) -> usize {
        assert!(r > 0.0, "radius must be positive, got {r}");
        assert!(
            self.cell_size <= r,
            "count_within requires cell_size <= r (cell_size {}, r {r})",
            self.cell_size
        );
        let r2 = r * r;
        let mut count = 0;
        self.for_each_candidate_indexed(q, r, |idx, p| {
            if dist2(p, q) < r2 && pred(idx) {
                count += 1;
            }
        });
        count
    }

    /// Indices of all points with `||p - q|| < r`, in ascending index
    /// order.
    pub fn within(&self, q: Vec3, r: f64) -> Vec<u32> {
        assert!(r > 0.0, "radius must be positive, got {r}");
        let r2 = r * r;
        let mut out = Vec::new();
        self.for_each_candidate_indexed(q, r, |idx, p| {
            if dist2(p, q) < r2 {
                out.push(idx);
            }
        });
        out.sort_unstable();
        out
    }

    /// The up-to-`k` nearest points with distance strictly below `r_max`,
    /// ordered by ascending distance, ties broken by lower point index.
    pub fn knn_within(&self, q: Vec3, k: usize, r_max: f64) -> Vec<u32> {
        assert!(k >= 1, "k must be at least 1");
        assert!(r_max > 0.0, "r_max must be positive, got {r_max}");
        let r2 = r_max * r_max;
        let mut candidates: Vec<(f64, u32)> = Vec::new();
        self.for_each_candidate_indexed(q, r_max, |idx, p| {
            let d2 = dist2(p, q);
            if d2 < r2 {
                candidates.push((d2, idx));
            }
        });
        candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        candidates.truncate(k);
        candidates.into_iter().map(|(_, i)| i).collect()
    }

    fn for_each_candidate(&self, q: Vec3, r: f64, mut f: impl FnMut(Vec3)) {
        self.for_each_candidate_indexed(q, r, |_, p| f(p));
    }

    fn for_each_candidate_indexed(&self, q: Vec3, r: f64, mut f: impl FnMut(u32, Vec3)) {
        let reach = (r / self.cell_size).ceil() as i64;
        let center = cell_of(q, self.cell_size);
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let key = [
                        saturating_add(center[0], dx),
                        saturating_add(center[1], dy),
                        saturating_add(center[2], dz),
                    ];
                    if let Some(indices) = self.cells.get(&key) {
                        for &i in indices {
                            f(i, self.points[i as usize]);
                        }
                    }
                }
            }
        }
    }
}

fn cell_of(p: Vec3, cell_size: f64) -> [i32; 3] {
    [
        (p[0] / cell_size).floor() as i32,
        (p[1] / cell_size).floor() as i32,
        (p[2] / cell_size).floor() as i32,
    ]
}

fn saturating_add(a: i32, b: i64) -> i32 {
    (a as i64).saturating_add(b).clamp(i32::MIN as i64, i32::MAX as i64) as i32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut impl Rng, n: usize, extent: f64) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                [
                    rng.random_range(0.0..extent),
                    rng.random_range(0.0..extent),
                    rng.random_range(0.0..extent),
                ]
            })
            .collect()
    }

    fn brute_count(points: &[Vec3], q: Vec3, r: f64) -> usize {
        points.iter().filter(|p| dist2(**p, q) < r * r).count()
    }

    fn brute_knn(points: &[Vec3], q: Vec3, k: usize, r_max: f64) -> Vec<u32> {
        let mut c: Vec<(f64, u32)> = points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let d2 = dist2(*p, q);
                (d2 < r_max * r_max).then_some((d2, i as u32))
            })
            .collect();
        c.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        c.truncate(k);
        c.into_iter().map(|(_, i)| i).collect()
    }

    #[test]
    fn single_point_occupies_one_cell() {
        let grid = VoxelGrid::build(vec![[0.0, 0.0, 0.0]], 0.3);
        assert_eq!(grid.cell_count(), 1);
    }

    #[test]
    fn floor_rule_splits_cells() {
        let grid = VoxelGrid::build(vec![[0.0, 0.0, 0.0], [0.31, 0.0, 0.0]], 0.3);
        assert_eq!(grid.cell_count(), 2);
    }

    #[test]
    fn empty_grid_queries_return_zero() {
        let grid = VoxelGrid::build(vec![], 0.3);
        assert_eq!(grid.cell_count(), 0);
        assert_eq!(grid.count_within([0.0; 3], 0.3), 0);
        assert!(grid.knn_within([0.0; 3], 3, 1.0).is_empty());
    }

    #[test]
    fn count_is_strictly_within() {
        let grid = VoxelGrid::build(vec![[0.29, 0.0, 0.0], [0.31, 0.0, 0.0]], 0.3);
        assert_eq!(grid.count_within([0.0; 3], 0.3), 1);
        // A point at exactly distance r is excluded.
        let grid = VoxelGrid::build(vec![[0.3, 0.0, 0.0]], 0.3);
        assert_eq!(grid.count_within([0.0; 3], 0.3), 0);
    }

    #[test]
    #[should_panic(expected = "cell_size <= r")]
    fn coarse_grid_is_a_contract_violation() {
        let grid = VoxelGrid::build(vec![[0.0; 3]], 1.0);
        grid.count_within([0.0; 3], 0.3);
    }

    #[test]
    fn count_matches_brute_force_on_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points = random_points(&mut rng, 10_000, 10.0);
        let grid = VoxelGrid::build(points.clone(), 0.3);
        for _ in 0..100 {
            let q = [
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
            ];
            assert_eq!(grid.count_within(q, 0.3), brute_count(&points, q, 0.3));
        }
    }

    #[test]
    fn knn_undersupply_and_ties() {
        let grid = VoxelGrid::build(vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], 0.5);
        // Only 2 in range for k=3.
        assert_eq!(grid.knn_within([0.0; 3], 3, 2.0).len(), 2);
        // Equidistant: lower index first.
        assert_eq!(grid.knn_within([0.0; 3], 2, 2.0), vec![0, 1]);
    }

    #[test]
    fn knn_matches_brute_force_on_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let points = random_points(&mut rng, 1_000, 10.0);
        let grid = VoxelGrid::build(points.clone(), 0.5);
        for _ in 0..50 {
            let q = [
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
            ];
            assert_eq!(grid.knn_within(q, 70, 2.0), brute_knn(&points, q, 70, 2.0));
        }
    }

    #[test]
    fn queries_independent_of_insertion_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let points = random_points(&mut rng, 500, 5.0);
        let mut shuffled: Vec<(usize, Vec3)> = points.iter().copied().enumerate().collect();
        shuffled.shuffle(&mut rng);
        // Map shuffled indices back to original ones for comparison.
        let grid_a = VoxelGrid::build(points.clone(), 0.5);
        let grid_b = VoxelGrid::build(shuffled.iter().map(|(_, p)| *p).collect(), 0.5);
        for _ in 0..20 {
            let q = [
                rng.random_range(0.0..5.0),
                rng.random_range(0.0..5.0),
                rng.random_range(0.0..5.0),
            ];
            assert_eq!(grid_a.count_within(q, 0.5), grid_b.count_within(q, 0.5));
            let knn_a: Vec<f64> = grid_a
                .knn_within(q, 10, 2.0)
                .iter()
                .map(|&i| dist2(points[i as usize], q))
                .collect();
            let knn_b: Vec<f64> = grid_b
                .knn_within(q, 10, 2.0)
                .iter()
                .map(|&i| dist2(shuffled[i as usize].1, q))
                .collect();
            assert_eq!(knn_a, knn_b);
        }
    }
}
