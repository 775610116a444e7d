//! Individual tree segmentation for forest laser-scanning point clouds.
//!
//! The crate is organised as a pipeline of independent stages that all
//! exchange [`LabeledCloud`]s:
//!
//! * [`preprocess`]: tiling, low-density tile removal, voxel downsampling
//!   and cube-shaped sample boxes.
//! * [`semantic`]: pluggable per-point classification (oracle, noisy
//!   oracle, or an external process speaking the [`io`] interchange format).
//! * [`instance`]: graph-based single-tree segmentation: stem seeds from a
//!   height slice, multi-source shortest-path attribution of wood points and
//!   leaf attachment.
//! * [`evaluate`]: KNN point matching, greedy tree elimination, per-tree
//!   metrics and plot/dataset aggregation.
//! * [`optimize`]: Gaussian-process Bayesian optimisation of the
//!   segmentation hyperparameters, tolerant to failing trials, with a
//!   two-stage protocol and parameter importance analysis.
//!
//! [`synthetic`] builds labelled forests with known ground truth for tests
//! and experiments.

pub mod cloud;
pub mod error;
pub mod evaluate;
pub mod instance;
pub mod io;
pub mod optimize;
pub mod preprocess;
pub mod semantic;
pub mod spatial;
pub mod synthetic;
pub mod voxel;

pub use cloud::{InstanceId, LabeledCloud, Point, SemanticLabel};
pub use error::{Error, PipelineFailure, Result, Stage};
pub use spatial::SpatialIndex;
pub use voxel::VoxelGrid;
