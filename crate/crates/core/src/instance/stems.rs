use crate::cloud::{LabeledCloud, Point, SemanticLabel};
use crate::error::{Error, Result};
use crate::spatial::SpatialIndex;

use super::SegmentationParams;

/// An initial stem cluster anchoring one tree.
#[derive(Debug, Clone, PartialEq)]
pub struct StemSeed {
    pub id: u32,
    /// Indices into the segmented cloud.
    pub members: Vec<usize>,
    pub centroid: Point,
}

/// DBSCAN over `points`; returns a cluster id per point, `None` for noise.
///
/// A point is a core point when at least `min_samples` points (itself
/// included) lie within `eps`. Points are visited in index order, so cluster
/// ids and border-point ownership are deterministic.
pub fn dbscan(points: &[Point], eps: f64, min_samples: usize) -> Vec<Option<usize>> {
    const UNVISITED: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    let n = points.len();
    let index = SpatialIndex::new(points.to_vec());
    let mut label = vec![UNVISITED; n];
    let mut next_cluster = 0;
    let mut neighbours = Vec::new();
    let mut queue = Vec::new();

    for start in 0..n {
        if label[start] != UNVISITED {
            continue;
        }
        index.within_radius_unsorted(&points[start], eps, &mut neighbours);
        if neighbours.len() < min_samples {
            label[start] = NOISE;
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        label[start] = cluster;
        queue.clear();
        queue.extend(neighbours.iter().copied());
        let mut head = 0;
        while head < queue.len() {
            let q = queue[head];
            head += 1;
            if label[q] == NOISE {
                label[q] = cluster;
            }
            if label[q] != UNVISITED {
                continue;
            }
            label[q] = cluster;
            index.within_radius_unsorted(&points[q], eps, &mut neighbours);
            if neighbours.len() >= min_samples {
                queue.extend(neighbours.iter().copied());
            }
        }
    }
    label
        .into_iter()
        .map(|l| {
            if l == NOISE || l == UNVISITED {
                None
            } else {
                Some(l)
            }
        })
        .collect()
}

/// Clusters stem points in the height band
/// `[find_stems_height, find_stems_height + find_stems_thickness]`.
///
/// The clustering radius is half the band thickness. Seeds are numbered by
/// descending member count (ties by lowest member index).
pub fn find_stems(cloud: &LabeledCloud, p: &SegmentationParams) -> Result<Vec<StemSeed>> {
    let semantic = cloud
        .semantic
        .as_ref()
        .ok_or(Error::MissingLabels("find_stems needs semantic labels"))?;
    if cloud.heights.is_none() {
        return Err(Error::MissingLabels("find_stems needs normalised heights"));
    }
    let lo = p.find_stems_height;
    let hi = p.find_stems_height + p.find_stems_thickness;
    let slice: Vec<usize> = (0..cloud.len())
        .filter(|&i| semantic[i] == SemanticLabel::Stem && (lo..=hi).contains(&cloud.height(i)))
        .collect();
    if slice.is_empty() {
        return Ok(Vec::new());
    }
    let pts: Vec<Point> = slice.iter().map(|&i| cloud.points[i]).collect();
    let labels = dbscan(&pts, p.find_stems_thickness / 2.0, p.find_stems_min_points);

    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (k, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            clusters[*c].push(slice[k]);
        }
    }
    clusters.retain(|c| c.len() >= p.find_stems_min_points);
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    Ok(clusters
        .into_iter()
        .enumerate()
        .map(|(id, members)| {
            let inv = 1.0 / members.len() as f64;
            let (sx, sy, sz) = members.iter().fold((0.0, 0.0, 0.0), |(x, y, z), &i| {
                let q = cloud.points[i];
                (x + q.x, y + q.y, z + q.z)
            });
            StemSeed {
                id: id as u32,
                members,
                centroid: Point::new(sx * inv, sy * inv, sz * inv),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    /// Ring of stem points around (cx, cy) between heights 1.4 and 2.1.
    fn cylinder(cx: f64, cy: f64, r: f64, per_ring: usize, rings: usize) -> Vec<Point> {
        let mut out = Vec::new();
        for k in 0..rings {
            let z = 1.4 + 0.7 * k as f64 / (rings - 1) as f64;
            for j in 0..per_ring {
                let a = TAU * (j as f64 + 0.5 * (k % 2) as f64) / per_ring as f64;
                out.push(Point::new(cx + r * a.cos(), cy + r * a.sin(), z));
            }
        }
        out
    }

    fn stem_cloud(points: Vec<Point>) -> LabeledCloud {
        let n = points.len();
        let h = points.iter().map(|p| p.z).collect();
        LabeledCloud::new(points)
            .unwrap()
            .with_semantic(vec![SemanticLabel::Stem; n])
            .unwrap()
            .with_heights(h)
            .unwrap()
    }

    fn params(min_points: usize) -> SegmentationParams {
        SegmentationParams {
            find_stems_height: 1.5,
            find_stems_thickness: 0.5,
            find_stems_min_points: min_points,
            ..Default::default()
        }
    }

    #[test]
    fn three_separate_stems() {
        let mut pts = cylinder(0.0, 0.0, 0.15, 24, 15);
        pts.extend(cylinder(3.0, 0.0, 0.12, 24, 15));
        pts.extend(cylinder(1.5, 2.6, 0.2, 24, 15));
        let seeds = find_stems(&stem_cloud(pts), &params(20)).unwrap();
        assert_eq!(seeds.len(), 3);
        let mut xs: Vec<f64> = seeds.iter().map(|s| s.centroid.x).collect();
        xs.sort_by(f64::total_cmp);
        assert!(
            (xs[0] - 0.0).abs() < 0.05 && (xs[1] - 1.5).abs() < 0.05 && (xs[2] - 3.0).abs() < 0.05
        );
        // Descending size.
        assert!(seeds
            .windows(2)
            .all(|w| w[0].members.len() >= w[1].members.len()));
    }

    #[test]
    fn min_points_boundary() {
        // A tight clump of exactly 9 points inside the band.
        let pts: Vec<Point> = (0..9)
            .map(|i| Point::new(0.01 * i as f64, 0.0, 1.7))
            .collect();
        let c = stem_cloud(pts);
        assert!(find_stems(&c, &params(10)).unwrap().is_empty());
        assert_eq!(find_stems(&c, &params(9)).unwrap().len(), 1);
    }

    #[test]
    fn touching_stems_merge() {
        let mut pts = cylinder(0.0, 0.0, 0.15, 24, 15);
        pts.extend(cylinder(0.32, 0.0, 0.15, 24, 15));
        let seeds = find_stems(&stem_cloud(pts), &params(20)).unwrap();
        assert_eq!(seeds.len(), 1);
    }

    #[test]
    fn empty_slice_is_not_an_error() {
        let pts = vec![Point::new(0.0, 0.0, 5.0)];
        assert!(find_stems(&stem_cloud(pts), &params(1)).unwrap().is_empty());
    }

    #[test]
    fn dbscan_matches_connectivity_oracle() {
        // With min_samples = 1 every point is core: clusters are the connected
        // components of the eps-graph.
        let pts: Vec<Point> = [0.0, 0.1, 0.2, 1.0, 1.05, 3.0]
            .iter()
            .map(|&x| Point::new(x, 0.0, 0.0))
            .collect();
        let l = dbscan(&pts, 0.11, 1);
        assert_eq!(
            l,
            vec![Some(0), Some(0), Some(0), Some(1), Some(1), Some(2)]
        );
        let l = dbscan(&pts, 0.11, 2);
        assert_eq!(l, vec![Some(0), Some(0), Some(0), Some(1), Some(1), None]);
    }
}
