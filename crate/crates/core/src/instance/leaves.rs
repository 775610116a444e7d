use rayon::prelude::*;

use crate::cloud::{InstanceId, LabeledCloud, Point, SemanticLabel};
use crate::error::{Error, Result};
use crate::spatial::SpatialIndex;
use crate::voxel::VoxelGrid;

use super::attribute::multi_source_paths;
use super::graph::DEFAULT_K_MAX;
use super::{is_wood, SegmentationParams};

/// Attaches vegetation to the attributed wood.
///
/// Vegetation is voxelised at `add_leaves_voxel_length`; each voxel is
/// represented by its centroid. Representatives link to each other and to
/// attributed wood points within `add_leaves_edge_length` (nearest
/// [`DEFAULT_K_MAX`] of each kind). A shortest-path search from the wood
/// labels every reachable representative, and each vegetation point takes
/// its voxel's label.
pub fn add_leaves(cloud: &LabeledCloud, p: &SegmentationParams) -> Result<LabeledCloud> {
    let semantic = cloud
        .semantic
        .as_ref()
        .ok_or(Error::MissingLabels("add_leaves needs semantic labels"))?;
    let instance = cloud
        .instance
        .as_ref()
        .ok_or(Error::MissingLabels("add_leaves needs attributed wood"))?;

    let wood: Vec<(usize, InstanceId)> = (0..cloud.len())
        .filter(|&i| is_wood(semantic[i]))
        .filter_map(|i| instance[i].map(|id| (i, id)))
        .collect();
    let leaves: Vec<usize> = (0..cloud.len())
        .filter(|&i| semantic[i] == SemanticLabel::Vegetation)
        .collect();

    let mut labels = instance.clone();
    for &i in &leaves {
        labels[i] = None;
    }
    if wood.is_empty() || leaves.is_empty() {
        let mut out = cloud.clone();
        out.instance = Some(labels);
        return Ok(out);
    }

    let leaf_pts: Vec<Point> = leaves.iter().map(|&i| cloud.points[i]).collect();
    let origin = leaf_pts.iter().fold(leaf_pts[0], |m, q| {
        Point::new(m.x.min(q.x), m.y.min(q.y), m.z.min(q.z))
    });
    let grid = VoxelGrid::from_points(&leaf_pts, origin, p.add_leaves_voxel_length)?;
    let voxels: Vec<&Vec<usize>> = grid.cells.values().collect();
    let reps: Vec<Point> = voxels
        .iter()
        .map(|members| {
            let inv = 1.0 / members.len() as f64;
            let (x, y, z) = members.iter().fold((0.0, 0.0, 0.0), |(x, y, z), &k| {
                let q = leaf_pts[k];
                (x + q.x, y + q.y, z + q.z)
            });
            Point::new(x * inv, y * inv, z * inv)
        })
        .collect();

    let radius = p.add_leaves_edge_length;
    let rep_index = SpatialIndex::new(reps.clone());
    let wood_index = SpatialIndex::new(wood.iter().map(|&(i, _)| cloud.points[i]).collect());
    let k_rep = (DEFAULT_K_MAX + 1).min(reps.len());
    let k_wood = DEFAULT_K_MAX.min(wood.len());

    // Vertices: representatives 0..m, then every wood point that some
    // representative links to.
    let links: Vec<(Vec<(usize, f64)>, Vec<(usize, f64)>)> = reps
        .par_iter()
        .enumerate()
        .map(|(r, q)| {
            let to_reps = rep_index
                .knn(q, k_rep)
                .expect("non-empty")
                .into_iter()
                .filter(|n| n.index != r && n.distance <= radius)
                .map(|n| (n.index, n.distance))
                .collect();
            let to_wood = wood_index
                .knn(q, k_wood)
                .expect("non-empty")
                .into_iter()
                .filter(|n| n.distance <= radius)
                .map(|n| (n.index, n.distance))
                .collect();
            (to_reps, to_wood)
        })
        .collect();

    let m = reps.len();
    let mut wood_vertex = vec![usize::MAX; wood.len()];
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    let mut sources = Vec::new();
    for (r, (to_reps, to_wood)) in links.into_iter().enumerate() {
        for (s, w) in to_reps {
            adjacency[r].push((s, w));
            adjacency[s].push((r, w));
        }
        for (k, w) in to_wood {
            if wood_vertex[k] == usize::MAX {
                wood_vertex[k] = adjacency.len();
                adjacency.push(Vec::new());
                sources.push((wood_vertex[k], wood[k].1));
            }
            let v = wood_vertex[k];
            adjacency[r].push((v, w));
            adjacency[v].push((r, w));
        }
    }
    let reach = multi_source_paths(&adjacency, &sources, 0.0);

    for (r, members) in voxels.iter().enumerate() {
        if let Some(hit) = reach[r] {
            for &k in members.iter() {
                labels[leaves[k]] = Some(hit.label);
            }
        }
    }
    let mut out = cloud.clone();
    out.instance = Some(labels);
    Ok(out)
}
