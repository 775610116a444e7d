use rayon::prelude::*;

use crate::cloud::{LabeledCloud, Point};
use crate::spatial::SpatialIndex;

use super::{is_wood, SegmentationParams};

/// Neighbour cap per vertex when building the wood graph.
pub const DEFAULT_K_MAX: usize = 16;

/// Undirected weighted graph over a subset of cloud points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGraph {
    /// Cloud index of each vertex.
    pub vertices: Vec<usize>,
    /// Per-vertex `(neighbour vertex, edge length)`, sorted by neighbour.
    pub adjacency: Vec<Vec<(usize, f64)>>,
}

impl PointGraph {
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges as `(u, v, w)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (u, adj) in self.adjacency.iter().enumerate() {
            for &(v, w) in adj {
                if u < v {
                    out.push((u, v, w));
                }
            }
        }
        out
    }

    /// Builds a graph from explicit edges over `n` vertices.
    pub fn from_edges(vertices: Vec<usize>, edges: &[(usize, usize, f64)]) -> Self {
        let mut adjacency = vec![Vec::new(); vertices.len()];
        for &(u, v, w) in edges {
            if u != v {
                adjacency[u].push((v, w));
                adjacency[v].push((u, w));
            }
        }
        finish_adjacency(&mut adjacency);
        Self {
            vertices,
            adjacency,
        }
    }
}

fn finish_adjacency(adj: &mut [Vec<(usize, f64)>]) {
    for list in adj.iter_mut() {
        list.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        list.dedup_by(|a, b| a.0 == b.0);
    }
}

pub fn build_wood_graph(cloud: &LabeledCloud, p: &SegmentationParams) -> PointGraph {
    build_wood_graph_with(cloud, p, DEFAULT_K_MAX)
}

/// Wood graph with an explicit neighbour cap.
///
/// Vertices are the stem points. Each vertex links to its `k_max` nearest
/// stem points within `graph_edge_length` whose height slice (thickness
/// `slice_thickness`) is the same as or adjacent to its own; the union of
/// these links forms the undirected edge set.
pub fn build_wood_graph_with(
    cloud: &LabeledCloud,
    p: &SegmentationParams,
    k_max: usize,
) -> PointGraph {
    let vertices: Vec<usize> = match &cloud.semantic {
        Some(sem) => (0..cloud.len()).filter(|&i| is_wood(sem[i])).collect(),
        None => Vec::new(),
    };
    let pts: Vec<Point> = vertices.iter().map(|&i| cloud.points[i]).collect();
    let slice: Vec<i64> = vertices
        .iter()
        .map(|&i| (cloud.height(i) / p.slice_thickness).floor() as i64)
        .collect();
    let eligible = |u: usize, v: usize| u != v && (slice[u] - slice[v]).abs() <= 1;
    let index = SpatialIndex::new(pts.clone());
    let radius = p.graph_edge_length;

    let picks: Vec<Vec<(usize, f64)>> = (0..pts.len())
        .into_par_iter()
        .map(|u| {
            if k_max == 0 || pts.len() < 2 {
                return Vec::new();
            }
            // Grow the nearest-neighbour window until it holds k_max eligible
            // neighbours or reaches past the radius.
            let mut fetch = (2 * k_max + 1).min(pts.len());
            loop {
                let near = index.knn(&pts[u], fetch).expect("non-empty index");
                let beyond =
                    near.len() == pts.len() || near.last().is_some_and(|n| n.distance > radius);
                let picked: Vec<(usize, f64)> = near
                    .into_iter()
                    .filter(|n| n.distance <= radius && eligible(u, n.index))
                    .take(k_max)
                    .map(|n| (n.index, n.distance))
                    .collect();
                if beyond || picked.len() == k_max {
                    return picked;
                }
                fetch = (fetch * 2).min(pts.len());
            }
        })
        .collect();

    let mut adjacency = vec![Vec::new(); pts.len()];
    for (u, list) in picks.into_iter().enumerate() {
        for (v, w) in list {
            adjacency[u].push((v, w));
            adjacency[v].push((u, w));
        }
    }
    finish_adjacency(&mut adjacency);
    PointGraph {
        vertices,
        adjacency,
    }
}
