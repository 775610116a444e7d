use rayon::prelude::*;

use crate::cloud::{LabeledCloud, SemanticLabel};
use crate::error::{Error, Result};
use crate::instance::normalize_heights;

use super::matching::{greedy_tree_matching, match_point_sets, Correspondence, TreeMatching};
use super::metrics::{detection_rates, height_metrics, DetectionMode, DetectionRates};

/// Sum in sorted order, so the result does not depend on input order.
pub(crate) fn ordered_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

fn ordered_mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    Some(ordered_sum(v.into_iter()) / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Mean over trees per plot, then mean over plots.
    #[default]
    Hierarchical,
    /// Mean over all trees of the dataset.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointMatching {
    /// Prediction and ground truth share one index space.
    SameIndex,
    /// Nearest-neighbour matching within a tolerance in meters.
    Nearest { tolerance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationOptions {
    pub matching: PointMatching,
    pub detection: DetectionMode,
    pub aggregation: Aggregation,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self {
            // Twice the default 1 cm voxel spacing.
            matching: PointMatching::Nearest { tolerance: 0.02 },
            detection: DetectionMode::default(),
            aggregation: Aggregation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotEvaluation {
    pub name: String,
    pub matching: TreeMatching,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotSummary {
    pub name: String,
    pub trees: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub mean_residual: Option<f64>,
    pub rmse: Option<f64>,
    pub rates: Option<DetectionRates>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSummary {
    pub plots: usize,
    pub trees: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub mean_residual: Option<f64>,
    pub rmse: Option<f64>,
    pub detection: Option<f64>,
    pub commission: Option<f64>,
    pub omission: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub plots: Vec<PlotEvaluation>,
    pub plot_summaries: Vec<PlotSummary>,
    pub dataset: DatasetSummary,
}

fn summarize(plot: &PlotEvaluation, mode: DetectionMode) -> PlotSummary {
    let recs = &plot.matching.records;
    let mean = |f: fn(&super::MatchRecord) -> f64| ordered_mean(recs.iter().map(f)).unwrap_or(0.0);
    let heights = height_metrics(recs).ok();
    PlotSummary {
        name: plot.name.clone(),
        trees: recs.len(),
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
        iou: mean(|r| r.iou),
        mean_residual: heights.map(|h| h.0),
        rmse: heights.map(|h| h.1),
        rates: detection_rates(&plot.matching, mode).ok(),
    }
}

/// Aggregates per-tree records into plot and dataset values.
///
/// Omitted trees score 0 on every point metric. Plots without ground-truth
/// trees are reported but left out of dataset means; height and rate
/// means skip plots where they are undefined.
pub fn aggregate_dataset(
    plots: Vec<PlotEvaluation>,
    detection: DetectionMode,
    aggregation: Aggregation,
) -> Result<EvaluationReport> {
    if plots.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let summaries: Vec<PlotSummary> = plots.iter().map(|p| summarize(p, detection)).collect();
    let with_trees: Vec<&PlotSummary> = summaries.iter().filter(|s| s.trees > 0).collect();
    if with_trees.is_empty() {
        return Err(Error::Empty("ground-truth trees in dataset"));
    }
    let trees = with_trees.iter().map(|s| s.trees).sum();
    let dataset = match aggregation {
        Aggregation::Hierarchical => {
            let m = |f: fn(&PlotSummary) -> f64| {
                ordered_mean(with_trees.iter().map(|s| f(s))).unwrap_or(0.0)
            };
            let opt =
                |f: fn(&PlotSummary) -> Option<f64>| ordered_mean(summaries.iter().filter_map(f));
            DatasetSummary {
                plots: with_trees.len(),
                trees,
                precision: m(|s| s.precision),
                recall: m(|s| s.recall),
                f1: m(|s| s.f1),
                iou: m(|s| s.iou),
                mean_residual: opt(|s| s.mean_residual),
                rmse: opt(|s| s.rmse),
                detection: opt(|s| s.rates.map(|r| r.detection)),
                commission: opt(|s| s.rates.map(|r| r.commission)),
                omission: opt(|s| s.rates.map(|r| r.omission)),
            }
        }
        Aggregation::Pooled => {
            let all: Vec<&super::MatchRecord> =
                plots.iter().flat_map(|p| &p.matching.records).collect();
            let m = |f: fn(&super::MatchRecord) -> f64| {
                ordered_mean(all.iter().map(|r| f(r))).unwrap_or(0.0)
            };
            let owned: Vec<super::MatchRecord> = all.iter().map(|r| (*r).clone()).collect();
            let heights = height_metrics(&owned).ok();
            let merged = TreeMatching {
                records: owned,
                unassigned_predictions: plots
                    .iter()
                    .flat_map(|p| p.matching.unassigned_predictions.iter().copied())
                    .collect(),
            };
            let rates = detection_rates(&merged, detection).ok();
            DatasetSummary {
                plots: with_trees.len(),
                trees,
                precision: m(|r| r.precision),
                recall: m(|r| r.recall),
                f1: m(|r| r.f1),
                iou: m(|r| r.iou),
                mean_residual: heights.map(|h| h.0),
                rmse: heights.map(|h| h.1),
                detection: rates.map(|r| r.detection),
                commission: rates.map(|r| r.commission),
                omission: rates.map(|r| r.omission),
            }
        }
    };
    Ok(EvaluationReport {
        plots,
        plot_summaries: summaries,
        dataset,
    })
}

fn with_heights(cloud: &LabeledCloud) -> LabeledCloud {
    let has_terrain = cloud
        .semantic
        .as_ref()
        .is_some_and(|s| s.contains(&SemanticLabel::Terrain));
    if cloud.heights.is_none() && has_terrain {
        if let Ok(c) = normalize_heights(cloud) {
            return c;
        }
    }
    cloud.clone()
}

/// Matches one predicted plot against its ground truth.
///
/// Tree heights use normalised heights when the cloud carries them or has
/// terrain points to derive them from, raw z otherwise.
pub fn evaluate_plot(
    name: &str,
    pred: &LabeledCloud,
    gt: &LabeledCloud,
    opts: &EvaluationOptions,
) -> PlotEvaluation {
    let pred = with_heights(pred);
    let gt = with_heights(gt);
    let matching = match opts.matching {
        PointMatching::SameIndex if pred.len() == gt.len() => {
            greedy_tree_matching(&gt, &pred, Correspondence::SameIndex)
        }
        PointMatching::SameIndex => {
            let corr = match_point_sets(&pred, &gt, 0.0);
            greedy_tree_matching(&gt, &pred, Correspondence::Matched(&corr))
        }
        PointMatching::Nearest { tolerance } => {
            let corr = match_point_sets(&pred, &gt, tolerance);
            greedy_tree_matching(&gt, &pred, Correspondence::Matched(&corr))
        }
    };
    PlotEvaluation {
        name: name.to_string(),
        matching,
    }
}

/// Evaluates `(name, prediction, ground truth)` plots and aggregates them.
/// The parallel and serial paths produce identical reports.
pub fn evaluate_dataset(
    plots: &[(String, LabeledCloud, LabeledCloud)],
    opts: &EvaluationOptions,
    parallel: bool,
) -> Result<EvaluationReport> {
    let evals: Vec<PlotEvaluation> = if parallel {
        plots
            .par_iter()
            .map(|(name, pred, gt)| evaluate_plot(name, pred, gt, opts))
            .collect()
    } else {
        plots
            .iter()
            .map(|(name, pred, gt)| evaluate_plot(name, pred, gt, opts))
            .collect()
    };
    aggregate_dataset(evals, opts.detection, opts.aggregation)
}
