//! Bayesian optimisation of the segmentation hyperparameters.
//!
//! A Gaussian process with a squared-exponential kernel models the dataset
//! F1 over the unit-normalised parameter box; expected improvement picks
//! the next trial. Trials that crash the pipeline are kept in the history
//! and enter the surrogate just below the worst observed score.

mod acquisition;
mod ascent;
mod gp;
mod importance;
mod objective;
mod search;
mod space;
mod two_stage;

pub use acquisition::{ei_value, expected_improvement, expected_improvement_with_gradient};
pub use gp::{
    fit_hyperparameters, gp_fit, gp_predict, kernel_eval, kernel_matrix, GpModel, HyperFit,
    KernelConfig, LengthScale, Prediction, PriorMean,
};
pub use importance::{importance_analysis, ImportanceReport, ParameterImportance, MIN_TRIALS};
pub use objective::SegmentationObjective;
pub use search::{
    best_so_far, best_trial, fit_surrogate, initial_design, latin_hypercube, optimize,
    optimize_resume, read_trial_log, suggest_next, surrogate_data, Objective, OptimizationResult,
    OptimizerConfig, TrialFailure, TrialLog, TrialRecord,
};
pub use space::{ParamKind, Parameter, ParameterSpace};
pub use two_stage::{
    select_parameters, two_stage_optimize, two_stage_resume, TwoStageResult, MAX_SELECTED,
};
