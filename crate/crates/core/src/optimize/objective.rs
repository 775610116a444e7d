use rayon::prelude::*;

use crate::cloud::LabeledCloud;
use crate::error::{Error, PipelineFailure, Result, Stage};
use crate::evaluate::{aggregate_dataset, evaluate_plot, EvaluationOptions, PointMatching};
use crate::instance::{normalize_heights, segment_instances, SegmentationParams};
use crate::semantic::{classify, ClassifierSpec};

use super::search::Objective;
use super::space::ParameterSpace;

struct Plot {
    name: String,
    input: LabeledCloud,
    truth: LabeledCloud,
}

/// Dataset F1 of the segmentation as a function of the searched parameters.
///
/// Plots are classified once up front; each evaluation segments every plot
/// and scores it against its ground truth. A plot whose segmentation fails
/// fails the whole trial.
pub struct SegmentationObjective {
    space: ParameterSpace,
    base: SegmentationParams,
    plots: Vec<Plot>,
    options: EvaluationOptions,
    parallel: bool,
}

impl SegmentationObjective {
    /// `plots` hold ground-truth semantic and instance labels. The noisy
    /// classifier is reseeded per plot with `seed + plot index`.
    pub fn new(
        space: ParameterSpace,
        base: SegmentationParams,
        plots: Vec<(String, LabeledCloud)>,
        classifier: &ClassifierSpec,
        options: EvaluationOptions,
    ) -> Result<Self> {
        if plots.is_empty() {
            return Err(Error::Empty("optimisation dataset"));
        }
        let prepared = plots
            .into_iter()
            .enumerate()
            .map(|(i, (name, truth))| {
                if truth.instance.is_none() {
                    return Err(Error::MissingLabels(
                        "optimisation plots need ground-truth instances",
                    ));
                }
                let spec = ClassifierSpec {
                    seed: classifier.seed.wrapping_add(i as u64),
                    ..classifier.clone()
                };
                let mut input = classify(&truth, &spec)?;
                input.instance = None;
                let input = normalize_heights(&input)?;
                let truth = normalize_heights(&truth)?;
                Ok(Plot { name, input, truth })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            space,
            base,
            plots: prepared,
            options: EvaluationOptions {
                matching: PointMatching::SameIndex,
                ..options
            },
            parallel: true,
        })
    }

    pub fn serial(mut self) -> Self {
        self.parallel = false;
        self
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    /// Dataset F1 for a full parameter set.
    pub fn score(&self, p: &SegmentationParams) -> Result<f64, PipelineFailure> {
        let run = |plot: &Plot| {
            segment_instances(&plot.input, p)
                .map(|pred| evaluate_plot(&plot.name, &pred, &plot.truth, &self.options))
        };
        let evals: Vec<_> = if self.parallel {
            self.plots.par_iter().map(run).collect()
        } else {
            self.plots.iter().map(run).collect()
        };
        let evals = evals.into_iter().collect::<Result<Vec<_>, _>>()?;
        let report = aggregate_dataset(evals, self.options.detection, self.options.aggregation)
            .map_err(|e| PipelineFailure::new(Stage::Evaluate, e.to_string()))?;
        Ok(report.dataset.f1)
    }
}

impl Objective for SegmentationObjective {
    fn evaluate(&mut self, values: &[f64]) -> Result<f64, PipelineFailure> {
        let p = self
            .space
            .apply(values, &self.base)
            .map_err(|e| PipelineFailure::new(Stage::FindStems, e.to_string()))?;
        self.score(&p)
    }
}
