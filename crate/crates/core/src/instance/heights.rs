use std::collections::HashMap;

use crate::cloud::{LabeledCloud, Point, SemanticLabel};
use crate::error::{Error, Result};
use crate::spatial::SpatialIndex;

/// Footprint used to look up the local terrain point.
pub const HEIGHT_TILE_SIZE: f64 = 1.0;

/// Terrain-labelled points higher than this above their tile's lowest one
/// are ignored as ground candidates.
pub const GROUND_BAND: f64 = 0.2;

struct TerrainTile {
    index: SpatialIndex,
    z: Vec<f64>,
}

/// Adds height above ground to every point.
///
/// The ground elevation under a point is the z of the horizontally nearest
/// terrain point in the same 1 m tile (tiles anchored at the terrain
/// minimum), falling back to the nearest terrain point overall. Within a
/// tile only points up to [`GROUND_BAND`] above the tile's lowest terrain
/// point count, so misclassified stem or crown points do not lift the
/// ground under a tree.
pub fn normalize_heights(cloud: &LabeledCloud) -> Result<LabeledCloud> {
    let terrain = cloud.indices_of(SemanticLabel::Terrain);
    if terrain.is_empty() {
        return Err(Error::MissingLabels(
            "height normalisation needs terrain points",
        ));
    }
    let terrain_pts: Vec<Point> = terrain.iter().map(|&i| cloud.points[i]).collect();
    let (ox, oy) = terrain_pts
        .iter()
        .fold((f64::INFINITY, f64::INFINITY), |(x, y), p| {
            (x.min(p.x), y.min(p.y))
        });
    let tile_of = |p: &Point| {
        (
            ((p.x - ox) / HEIGHT_TILE_SIZE).floor() as i64,
            ((p.y - oy) / HEIGHT_TILE_SIZE).floor() as i64,
        )
    };

    let mut grouped: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (k, p) in terrain_pts.iter().enumerate() {
        grouped.entry(tile_of(p)).or_default().push(k);
    }
    let mut ground_pts = Vec::new();
    let tiles: HashMap<(i64, i64), TerrainTile> = grouped
        .into_iter()
        .map(|(key, members)| {
            let floor = members
                .iter()
                .map(|&k| terrain_pts[k].z)
                .fold(f64::INFINITY, f64::min);
            let pts: Vec<Point> = members
                .iter()
                .map(|&k| terrain_pts[k])
                .filter(|p| p.z <= floor + GROUND_BAND)
                .collect();
            ground_pts.extend_from_slice(&pts);
            let z = pts.iter().map(|p| p.z).collect();
            (
                key,
                TerrainTile {
                    index: SpatialIndex::new_planar(&pts),
                    z,
                },
            )
        })
        .collect();
    let global = SpatialIndex::new_planar(&ground_pts);

    let heights = cloud
        .points
        .iter()
        .map(|p| {
            let q = Point::new(p.x, p.y, 0.0);
            let ground = match tiles.get(&tile_of(p)) {
                Some(tile) => tile.z[tile.index.knn(&q, 1)?[0].index],
                None => ground_pts[global.knn(&q, 1)?[0].index].z,
            };
            Ok(p.z - ground)
        })
        .collect::<Result<Vec<f64>>>()?;
    cloud.clone().with_heights(heights)
}
