//! Graph-based single-tree instance segmentation.
//!
//! 1. [`normalize_heights`]: height above the nearest terrain point.
//! 2. [`find_stems`]: density clustering of stem points in a height slice;
//!    each large enough cluster seeds one tree.
//! 3. [`build_wood_graph`]: radius graph over stem points, restricted to
//!    neighbours in the same or adjacent horizontal slices.
//! 4. [`attribute_wood`]: multi-source shortest paths from all seeds; each
//!    wood point joins the seed that reaches it first, unless the bridged
//!    gaps along that path exceed the budget.
//! 5. [`add_leaves`]: voxelised vegetation is attached to attributed wood
//!    through a second shortest-path search.

mod attribute;
mod graph;
mod heights;
mod leaves;
mod stems;

pub use attribute::attribute_wood;
pub use graph::{build_wood_graph, build_wood_graph_with, PointGraph, DEFAULT_K_MAX};
pub use heights::{normalize_heights, HEIGHT_TILE_SIZE};
pub use leaves::add_leaves;
pub use stems::{dbscan, find_stems, StemSeed};

use crate::cloud::{LabeledCloud, SemanticLabel};
use crate::error::{Error, PipelineFailure, Result, Stage};

/// Hyperparameters of the segmentation, all lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationParams {
    pub slice_thickness: f64,
    pub find_stems_height: f64,
    pub find_stems_thickness: f64,
    pub find_stems_min_points: usize,
    pub graph_edge_length: f64,
    pub graph_maximum_cumulative_gap: f64,
    pub add_leaves_voxel_length: f64,
    pub add_leaves_edge_length: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            slice_thickness: 0.5,
            find_stems_height: 1.5,
            find_stems_thickness: 0.5,
            find_stems_min_points: 50,
            graph_edge_length: 1.0,
            graph_maximum_cumulative_gap: 3.0,
            add_leaves_voxel_length: 0.5,
            add_leaves_edge_length: 1.0,
        }
    }
}

impl SegmentationParams {
    /// Parameter names in canonical order.
    pub const NAMES: [&'static str; 8] = [
        "slice_thickness",
        "find_stems_height",
        "find_stems_thickness",
        "find_stems_min_points",
        "graph_edge_length",
        "graph_maximum_cumulative_gap",
        "add_leaves_voxel_length",
        "add_leaves_edge_length",
    ];

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "slice_thickness" => self.slice_thickness,
            "find_stems_height" => self.find_stems_height,
            "find_stems_thickness" => self.find_stems_thickness,
            "find_stems_min_points" => self.find_stems_min_points as f64,
            "graph_edge_length" => self.graph_edge_length,
            "graph_maximum_cumulative_gap" => self.graph_maximum_cumulative_gap,
            "add_leaves_voxel_length" => self.add_leaves_voxel_length,
            "add_leaves_edge_length" => self.add_leaves_edge_length,
            _ => return None,
        })
    }

    /// Sets a parameter by name; `find_stems_min_points` is rounded.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        match name {
            "slice_thickness" => self.slice_thickness = value,
            "find_stems_height" => self.find_stems_height = value,
            "find_stems_thickness" => self.find_stems_thickness = value,
            "find_stems_min_points" => {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "find_stems_min_points must be a count, got {value}"
                    )));
                }
                self.find_stems_min_points = value.round() as usize
            }
            "graph_edge_length" => self.graph_edge_length = value,
            "graph_maximum_cumulative_gap" => self.graph_maximum_cumulative_gap = value,
            "add_leaves_voxel_length" => self.add_leaves_voxel_length = value,
            "add_leaves_edge_length" => self.add_leaves_edge_length = value,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown segmentation parameter `{other}`"
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for name in Self::NAMES {
            let v = self.get(name).expect("known name");
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Runs the full instance segmentation on a semantically labelled cloud.
///
/// Any existing instance labels are replaced. Stem and vegetation points
/// reached from a seed receive the seed's id; everything else is unassigned.
pub fn segment_instances(
    cloud: &LabeledCloud,
    p: &SegmentationParams,
) -> Result<LabeledCloud, PipelineFailure> {
    p.validate()
        .map_err(|e| PipelineFailure::new(Stage::FindStems, e.to_string()))?;
    if cloud.semantic.is_none() {
        return Err(PipelineFailure::new(
            Stage::Classify,
            "cloud has no semantic labels",
        ));
    }
    let mut work = if cloud.heights.is_some() {
        cloud.clone()
    } else {
        normalize_heights(cloud)
            .map_err(|e| PipelineFailure::new(Stage::NormalizeHeights, e.to_string()))?
    };
    work.instance = Some(vec![None; work.len()]);

    let seeds =
        find_stems(&work, p).map_err(|e| PipelineFailure::new(Stage::FindStems, e.to_string()))?;
    if seeds.is_empty() {
        return Err(PipelineFailure::new(
            Stage::FindStems,
            format!(
                "no stem cluster with at least {} points in the slice {}..{} m",
                p.find_stems_min_points,
                p.find_stems_height,
                p.find_stems_height + p.find_stems_thickness
            ),
        ));
    }
    log::debug!("found {} stem seeds", seeds.len());
    let graph = build_wood_graph(&work, p);
    let work = attribute_wood(&work, &graph, &seeds, p)
        .map_err(|e| PipelineFailure::new(Stage::AttributeWood, e.to_string()))?;
    add_leaves(&work, p).map_err(|e| PipelineFailure::new(Stage::AddLeaves, e.to_string()))
}

pub(crate) fn is_wood(label: SemanticLabel) -> bool {
    label == SemanticLabel::Stem
}
