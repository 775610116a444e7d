use std::collections::BTreeMap;

use crate::cloud::{LabeledCloud, Point};
use crate::error::{Error, Result};

pub type CellIndex = [i64; 3];

/// Sparse voxel occupancy: each cell maps to the indices of its member points.
///
/// Cells are keyed by `floor((p - origin) / spacing)` and iterate in
/// lexicographic cell order.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub origin: Point,
    pub spacing: f64,
    pub cells: BTreeMap<CellIndex, Vec<usize>>,
}

impl VoxelGrid {
    pub fn cell_of(&self, p: &Point) -> CellIndex {
        cell_index(p, &self.origin, self.spacing)
    }

    pub fn occupied(&self) -> usize {
        self.cells.len()
    }

    /// Grid over arbitrary points with an explicit origin.
    pub fn from_points(points: &[Point], origin: Point, spacing: f64) -> Result<Self> {
        check_spacing(spacing)?;
        let mut cells: BTreeMap<CellIndex, Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            cells
                .entry(cell_index(p, &origin, spacing))
                .or_default()
                .push(i);
        }
        Ok(Self {
            origin,
            spacing,
            cells,
        })
    }
}

pub(crate) fn check_spacing(spacing: f64) -> Result<()> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    Ok(())
}

pub fn cell_index(p: &Point, origin: &Point, spacing: f64) -> CellIndex {
    [
        ((p.x - origin.x) / spacing).floor() as i64,
        ((p.y - origin.y) / spacing).floor() as i64,
        ((p.z - origin.z) / spacing).floor() as i64,
    ]
}

/// Voxel grid anchored at the cloud's componentwise minimum.
pub fn build_voxel_grid(cloud: &LabeledCloud, spacing: f64) -> Result<VoxelGrid> {
    check_spacing(spacing)?;
    let (origin, _) = cloud.bounds().ok_or(Error::Empty("cloud"))?;
    VoxelGrid::from_points(&cloud.points, origin, spacing)
}
