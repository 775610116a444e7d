//! Evaluation of predicted tree instances against ground truth.
//!
//! Predictions produced from a downsampled cloud are first mapped onto the
//! ground-truth points by nearest-neighbour matching. Trees are then paired
//! by greedy elimination: the largest ground-truth tree claims the
//! prediction it overlaps most, and that prediction leaves the pool. Per-tree
//! precision, recall, F1 and IoU follow from the overlap counts; plot values
//! are means over trees and dataset values are means over plots.

mod aggregate;
mod matching;
mod metrics;

pub use aggregate::{
    aggregate_dataset, evaluate_dataset, evaluate_plot, Aggregation, DatasetSummary,
    EvaluationOptions, EvaluationReport, PlotEvaluation, PlotSummary, PointMatching,
};
pub use matching::{
    greedy_tree_matching, match_point_sets, Correspondence, MatchRecord, TreeMatching,
};
pub use metrics::{
    detection_rates, height_metrics, point_metrics, ConfusionCounts, CountLevel, DetectionMode,
    DetectionRates, PointMetrics,
};
