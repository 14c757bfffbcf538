//! Mutual k-nearest-neighbor graph weighted by PP-score differences,
//! and DBSCAN over it.
//!
//! Edges connect points that are each other's k-nearest neighbors
//! within a distance cap, weighted by how differently persistent the
//! two endpoints are. Density-based clustering over low-weight edges
//! then groups points of similar persistence into objects.

use rayon::prelude::*;

use crate::geom::Vec3;
use crate::index::VoxelGrid;

/// Sparse symmetric graph: per-node neighbor list with edge weights.
#[derive(Debug)]
pub struct PpGraph {
    adjacency: Vec<Vec<(u32, f64)>>,
}

impl PpGraph {
    /// Build directly from adjacency lists. Used by clustering tests to
    /// run DBSCAN over arbitrary weighted graphs; the lists are
    /// symmetrized and sorted.
    pub fn from_edges(node_count: usize, edges: &[(u32, u32, f64)]) -> PpGraph {
        let mut adjacency = vec![Vec::new(); node_count];
        for &(a, b, w) in edges {
            if a == b {
                continue;
            }
            adjacency[a as usize].push((b, w));
            adjacency[b as usize].push((a, w));
        }
        for list in &mut adjacency {
            list.sort_by(|x, y| x.0.cmp(&y.0));
            list.dedup_by_key(|e| e.0);
        }
        PpGraph { adjacency }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, node: usize) -> &[(u32, f64)] {
        &self.adjacency[node]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(|l| l.len()).sum::<usize>() / 2
    }
}

/// Build the mutual k-NN graph over `points` with weights `|tau_i - tau_j|`.
///
/// An edge (p, q) exists iff q is among p's k nearest neighbors, p is
/// among q's, and their distance is strictly below `r_prime`.
pub fn build_graph(points: &[Vec3], tau: &[f32], k: usize, r_prime: f64) -> PpGraph {
    assert_eq!(
        points.len(),
        tau.len(),
        "PP field must align with scan points"
    );
    assert!(k >= 1 && r_prime > 0.0);
    let grid = VoxelGrid::build(points.to_vec(), (r_prime / 2.0).max(1e-6));
    // k+1 because the query point itself comes back at distance zero.
    let knn: Vec<Vec<u32>> = points
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut ids = grid.knn_within(p, k + 1, r_prime);
            ids.retain(|&j| j != i as u32);
            ids.truncate(k);
            ids
        })
        .collect();
    let adjacency: Vec<Vec<(u32, f64)>> = knn
        .par_iter()
        .enumerate()
        .map(|(i, neighbors)| {
            let mut list: Vec<(u32, f64)> = neighbors
                .iter()
                .filter(|&&j| knn[j as usize].contains(&(i as u32)))
                .map(|&j| {
                    let w = (tau[i] as f64 - tau[j as usize] as f64).abs();
                    (j, w)
                })
                .collect();
            list.sort_by(|x, y| x.0.cmp(&y.0));
            list
        })
        .collect();
    PpGraph { adjacency }
}

/// A DBSCAN cluster: sorted point indices plus cached statistics.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub indices: Vec<u32>,
    /// Nearest-rank alpha-percentile of the members' PP scores; filled
    /// by `filter_clusters`.
    pub tau_percentile: Option<f64>,
}

impl Cluster {
    pub fn point_count(&self) -> usize {
        self.indices.len()
    }
}

/// DBSCAN over a weighted graph.
///
/// A point's eps-neighborhood is its graph neighbors with edge weight
/// at most `eps`; a point is core when that neighborhood, itself
/// included, has at least `min_samples` members. Clusters are maximal
/// density-connected sets; noise is discarded. Points are visited in
/// index order and border points go to the first cluster that reaches
/// them, so the partition is deterministic.
pub fn dbscan(graph: &PpGraph, eps: f64, min_samples: usize) -> Vec<Cluster> {
    let n = graph.node_count();
    let eps_neighbors = |i: usize| -> Vec<u32> {
        graph.neighbors(i)
            .iter()
            .filter(|&&(_, w)| w <= eps)
            .map(|&(j, _)| j)
            .collect()
    };
    let mut assignment: Vec<Option<u32>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut clusters: Vec<Vec<u32>> = Vec::new();
    for start in 0..n {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let neighbors = eps_neighbors(start);
        if neighbors.len() + 1 < min_samples {
            continue; // noise unless later claimed as a border point
        }
        let cluster_id = clusters.len() as u32;
        let mut members = vec![start as u32];
        assignment[start] = Some(cluster_id);
        let mut queue: std::collections::VecDeque<u32> = neighbors.into();
        while let Some(j) = queue.pop_front() {
            let j = j as usize;
            if assignment[j].is_none() {
                assignment[j] = Some(cluster_id);
                members.push(j as u32);
            } else if assignment[j] != Some(cluster_id) {
                continue; // border point already claimed by an earlier cluster
            }
            if !visited[j] {
                visited[j] = true;
                let next = eps_neighbors(j);
                if next.len() + 1 >= min_samples {
                    queue.extend(next); // j is core: expand through it
                }
            }
        }
        clusters.push(members);
    }
    clusters
        .into_iter()
        .map(|mut indices| {
            indices.sort_unstable();
            Cluster {
                indices,
                tau_percentile: None,
            }
        })
        .collect()
}

/// Plain spatial DBSCAN: neighborhoods are balls of radius `eps`
/// (strict), queried on demand from a voxel grid. Used by the baseline
/// detector, which clusters by proximity alone.
pub fn euclidean_dbscan(points: &[Vec3], eps: f64, min_samples: usize) -> Vec<Cluster> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let grid = VoxelGrid::build(points.to_vec(), eps);
    let neighbors_of = |i: usize| -> Vec<u32> {
        let mut ids = grid.within(points[i], eps);
        ids.retain(|&j| j != i as u32);
        ids
    };
    let mut assignment: Vec<Option<u32>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut clusters: Vec<Vec<u32>> = Vec::new();
    for start in 0..n {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let neighbors = neighbors_of(start);
        if neighbors.len() + 1 < min_samples {
            continue;
        }
        let cluster_id = clusters.len() as u32;
        let mut members = vec![start as u32];
        assignment[start] = Some(cluster_id);
        let mut queue: std::collections::VecDeque<u32> = neighbors.into();
        while let Some(j) = queue.pop_front() {
            let j = j as usize;
            if assignment[j].is_none() {
                assignment[j] = Some(cluster_id);
                members.push(j as u32);
            } else if assignment[j] != Some(cluster_id) {
                continue;
            }
            if !visited[j] {
                visited[j] = true;
                let next = neighbors_of(j);
                if next.len() + 1 >= min_samples {
                    queue.extend(next);
                }
            }
        }
        clusters.push(members);
    }
    clusters
        .into_iter()
        .map(|mut indices| {
            indices.sort_unstable();
            Cluster {
                indices,
                tau_percentile: None,
            }
        })
        .collect()
}
