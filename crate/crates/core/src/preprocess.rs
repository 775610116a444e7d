//! Tiling, density filtering, voxel downsampling and sample-box extraction.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{LabeledCloud, Point};
use crate::error::{Error, Result};
use crate::voxel::{check_spacing, VoxelGrid};

/// Horizontal footprint cell and its members.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub cell: [i64; 2],
    pub members: Vec<usize>,
    /// Points per square meter of footprint.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub tile_size: f64,
    pub min_tile_density: f64,
    pub sample_box_size_m: [f64; 3],
    pub sample_box_overlap: [f64; 3],
    pub min_points_per_box: usize,
    pub max_points_per_box: usize,
    pub subsample: bool,
    pub subsampling_min_spacing: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            tile_size: 1.0,
            min_tile_density: 50.0,
            sample_box_size_m: [6.0, 6.0, 8.0],
            sample_box_overlap: [0.5, 0.5, 0.5],
            min_points_per_box: 1000,
            max_points_per_box: 20000,
            subsample: true,
            subsampling_min_spacing: 0.01,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.tile_size > 0.0 && self.tile_size.is_finite()) {
            return bad(format!(
                "tile_size must be positive, got {}",
                self.tile_size
            ));
        }
        if !(self.min_tile_density >= 0.0) {
            return bad(format!(
                "min_tile_density must be non-negative, got {}",
                self.min_tile_density
            ));
        }
        for a in 0..3 {
            if !(self.sample_box_size_m[a] > 0.0 && self.sample_box_size_m[a].is_finite()) {
                return bad(format!(
                    "sample box extents must be positive, got {:?}",
                    self.sample_box_size_m
                ));
            }
            if !(0.0..1.0).contains(&self.sample_box_overlap[a]) {
                return bad(format!(
                    "sample box overlap must lie in [0, 1), got {:?}",
                    self.sample_box_overlap
                ));
            }
        }
        if self.min_points_per_box > self.max_points_per_box {
            return bad(format!(
                "min_points_per_box {} exceeds max_points_per_box {}",
                self.min_points_per_box, self.max_points_per_box
            ));
        }
        if self.max_points_per_box == 0 {
            return bad("max_points_per_box must be at least 1".into());
        }
        check_spacing(self.subsampling_min_spacing)
    }
}

pub fn tile_cloud(cloud: &LabeledCloud, tile_size: f64) -> Result<Vec<Tile>> {
    if !(tile_size > 0.0 && tile_size.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tile_size must be positive, got {tile_size}"
        )));
    }
    let mut cells: BTreeMap<[i64; 2], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let cell = [
            (p.x / tile_size).floor() as i64,
            (p.y / tile_size).floor() as i64,
        ];
        cells.entry(cell).or_default().push(i);
    }
    let area = tile_size * tile_size;
    Ok(cells
        .into_iter()
        .map(|(cell, members)| Tile {
            cell,
            density: members.len() as f64 / area,
            members,
        })
        .collect())
}

/// Keeps points of tiles whose density reaches `min_density`, in original order.
pub fn filter_low_density_tiles(
    cloud: &LabeledCloud,
    tiles: &[Tile],
    min_density: f64,
) -> LabeledCloud {
    let mut keep: Vec<usize> = tiles
        .iter()
        .filter(|t| t.density >= min_density)
        .flat_map(|t| t.members.iter().copied())
        .collect();
    keep.sort_unstable();
    cloud.select(&keep)
}

/// One random original point per occupied voxel.
///
/// The grid is anchored at the world origin so that a second pass over the
/// output sees one point per cell and returns it unchanged.
pub fn voxel_downsample(cloud: &LabeledCloud, spacing: f64, seed: u64) -> Result<LabeledCloud> {
    let keep = voxel_representatives(cloud, spacing, seed)?;
    Ok(cloud.select(&keep))
}

pub(crate) fn voxel_representatives(
    cloud: &LabeledCloud,
    spacing: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    check_spacing(spacing)?;
    let grid = VoxelGrid::from_points(&cloud.points, Point::default(), spacing)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(grid
        .cells
        .values()
        .map(|members| members[rng.random_range(0..members.len())])
        .collect())
}

/// A cube-shaped region of the cloud, shifted so its minimum corner is the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub extent: [f64; 3],
    /// Added to the shifted coordinates to recover the source coordinates.
    pub offset: Point,
    pub cloud: LabeledCloud,
    /// Indices of the members in the cloud passed to [`sample_boxes`].
    pub source_indices: Vec<usize>,
}

impl SampleBox {
    pub fn restore(&self) -> LabeledCloud {
        let mut out = self.cloud.clone();
        out.translate(self.offset.x, self.offset.y, self.offset.z);
        out
    }
}

// Box origins are snapped down to this dyadic grid so that shifting
// non-negative coordinates is exact and the shift can be undone bit for bit.
const OFFSET_QUANTUM: f64 = 1.0 / 1024.0;

/// Slices the cloud into overlapping boxes.
///
/// Box origins start at the cloud minimum (snapped down to 1/1024 m) and
/// advance by `extent * (1 - overlap)` until a box reaches the maximum.
pub fn sample_boxes(
    cloud: &LabeledCloud,
    cfg: &PreprocessConfig,
    seed: u64,
) -> Result<Vec<SampleBox>> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(Error::Empty("cloud"));
    }
    let base: Vec<usize> = if cfg.subsample {
        voxel_representatives(cloud, cfg.subsampling_min_spacing, seed)?
    } else {
        (0..cloud.len()).collect()
    };
    let source = cloud.select(&base);
    let (lo, hi) = source.bounds().ok_or(Error::Empty("cloud"))?;
    let lo = Point::new(snap(lo.x), snap(lo.y), snap(lo.z));

    let mut axes: [Vec<f64>; 3] = Default::default();
    for (a, origins) in axes.iter_mut().enumerate() {
        *origins = box_origins(
            lo.coord(a),
            hi.coord(a),
            cfg.sample_box_size_m[a],
            cfg.sample_box_overlap[a],
        )?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b0e5);
    let mut boxes = Vec::new();
    for &ox in &axes[0] {
        for &oy in &axes[1] {
            for &oz in &axes[2] {
                let offset = Point::new(ox, oy, oz);
                let ext = cfg.sample_box_size_m;
                let mut members: Vec<usize> = (0..source.len())
                    .filter(|&i| {
                        let p = source.points[i];
                        (0..3).all(|a| {
                            let c = p.coord(a) - offset.coord(a);
                            (0.0..=ext[a]).contains(&c)
                        })
                    })
                    .collect();
                if members.len() < cfg.min_points_per_box {
                    continue;
                }
                if members.len() > cfg.max_points_per_box {
                    let mut picked: Vec<usize> =
                        index::sample(&mut rng, members.len(), cfg.max_points_per_box)
                            .into_iter()
                            .map(|k| members[k])
                            .collect();
                    picked.sort_unstable();
                    members = picked;
                }
                let mut sub = source.select(&members);
                sub.translate(-offset.x, -offset.y, -offset.z);
                boxes.push(SampleBox {
                    extent: ext,
                    offset,
                    cloud: sub,
                    source_indices: members.iter().map(|&i| base[i]).collect(),
                });
            }
        }
    }
    Ok(boxes)
}

fn snap(v: f64) -> f64 {
    (v / OFFSET_QUANTUM).floor() * OFFSET_QUANTUM
}

fn box_origins(lo: f64, hi: f64, extent: f64, overlap: f64) -> Result<Vec<f64>> {
    let stride = extent * (1.0 - overlap);
    if !(stride > 0.0) {
        return Err(Error::InvalidArgument(
            "degenerate box stride (overlap = 1)".into(),
        ));
    }
    let mut out = vec![lo];
    let mut k = 1u32;
    while lo + (k - 1) as f64 * stride + extent < hi {
        out.push(lo + k as f64 * stride);
        k += 1;
    }
    Ok(out)
}
