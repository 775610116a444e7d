use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::cloud::{InstanceId, LabeledCloud};
use crate::error::{Error, Result};

use super::graph::PointGraph;
use super::stems::StemSeed;
use super::SegmentationParams;

/// Settled state of a vertex after the multi-source search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Reach {
    pub label: InstanceId,
    pub distance: f64,
    /// Sum of `max(0, w - gap_free)` along the shortest path.
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    distance: f64,
    label: InstanceId,
    gap: f64,
    vertex: usize,
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.label.cmp(&other.label))
            .then(self.gap.total_cmp(&other.gap))
            .then(self.vertex.cmp(&other.vertex))
    }
}

/// Multi-source Dijkstra. Each vertex is claimed by the source label with
/// the shortest path; equal lengths go to the lower label.
pub(crate) fn multi_source_paths(
    adjacency: &[Vec<(usize, f64)>],
    sources: &[(usize, InstanceId)],
    gap_free: f64,
) -> Vec<Option<Reach>> {
    let mut best: Vec<Option<Reach>> = vec![None; adjacency.len()];
    let mut settled = vec![false; adjacency.len()];
    let mut heap = BinaryHeap::new();
    let better = |cand: &Reach, cur: &Option<Reach>| match cur {
        None => true,
        Some(c) => (cand.distance, cand.label, cand.gap)
            .partial_cmp(&(c.distance, c.label, c.gap))
            .is_some_and(|o| o == Ordering::Less),
    };
    for &(v, label) in sources {
        let reach = Reach {
            label,
            distance: 0.0,
            gap: 0.0,
        };
        if better(&reach, &best[v]) {
            best[v] = Some(reach);
            heap.push(Reverse(Entry {
                distance: 0.0,
                label,
                gap: 0.0,
                vertex: v,
            }));
        }
    }
    while let Some(Reverse(e)) = heap.pop() {
        if settled[e.vertex] {
            continue;
        }
        settled[e.vertex] = true;
        for &(v, w) in &adjacency[e.vertex] {
            if settled[v] {
                continue;
            }
            let cand = Reach {
                label: e.label,
                distance: e.distance + w,
                gap: e.gap + (w - gap_free).max(0.0),
            };
            if better(&cand, &best[v]) {
                best[v] = Some(cand);
                heap.push(Reverse(Entry {
                    distance: cand.distance,
                    label: cand.label,
                    gap: cand.gap,
                    vertex: v,
                }));
            }
        }
    }
    best
}

/// Assigns wood vertices to the seed with the shortest graph path.
///
/// A vertex stays unassigned when it is unreachable, or when the cumulative
/// gap of its shortest path (edge length beyond `add_leaves_voxel_length`,
/// summed) exceeds `graph_maximum_cumulative_gap`.
pub fn attribute_wood(
    cloud: &LabeledCloud,
    graph: &PointGraph,
    seeds: &[StemSeed],
    p: &SegmentationParams,
) -> Result<LabeledCloud> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "attribute_wood needs at least one seed".into(),
        ));
    }
    let mut vertex_of = vec![usize::MAX; cloud.len()];
    for (v, &i) in graph.vertices.iter().enumerate() {
        vertex_of[i] = v;
    }
    let mut sources = Vec::new();
    for seed in seeds {
        for &i in &seed.members {
            let v = vertex_of.get(i).copied().unwrap_or(usize::MAX);
            if v == usize::MAX {
                return Err(Error::InvalidArgument(format!(
                    "seed {} member {i} is not a graph vertex",
                    seed.id
                )));
            }
            sources.push((v, seed.id));
        }
    }
    let reach = multi_source_paths(&graph.adjacency, &sources, p.add_leaves_voxel_length);

    let mut labels = vec![None; cloud.len()];
    for (v, r) in reach.iter().enumerate() {
        labels[graph.vertices[v]] = match r {
            Some(r) if r.gap <= p.graph_maximum_cumulative_gap => Some(r.label),
            _ => None,
        };
    }
    let mut out = cloud.clone();
    out.instance = Some(labels);
    Ok(out)
}
