use log::info;

use crate::error::{Error, PipelineFailure, Result};

use super::importance::{importance_analysis, ImportanceReport};
use super::search::{best_trial, optimize_resume, Objective, OptimizerConfig, TrialRecord};
use super::space::ParameterSpace;

/// At most this many parameters are re-optimised in the second stage.
pub const MAX_SELECTED: usize = 3;

/// Offset separating the second stage's random streams from the first.
const STAGE2_SEED: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageResult {
    pub best: TrialRecord,
    /// Both stages in trial order; second-stage records have `stage == 2`.
    pub history: Vec<TrialRecord>,
    pub stage1_best: TrialRecord,
    pub importance: Option<ImportanceReport>,
    /// Space indices freed in the second stage.
    pub selected: Vec<usize>,
}

/// Parameters whose importance reaches the uniform share `1/d`, best
/// first, capped at [`MAX_SELECTED`]; the top parameter is always taken.
pub fn select_parameters(report: &ImportanceReport) -> Vec<usize> {
    let d = report.entries.len();
    let ranking = report.ranking();
    let mut out: Vec<usize> = ranking
        .iter()
        .copied()
        .filter(|&i| report.entries[i].importance >= 1.0 / d as f64)
        .take(MAX_SELECTED)
        .collect();
    if out.is_empty() {
        out.extend(ranking.first());
    }
    out
}

pub fn two_stage_optimize<O: Objective + ?Sized>(
    objective: &mut O,
    space: &ParameterSpace,
    budget1: usize,
    budget2: usize,
    seed: u64,
    cfg: &OptimizerConfig,
) -> Result<TwoStageResult> {
    two_stage_resume(
        objective,
        space,
        budget1,
        budget2,
        seed,
        cfg,
        Vec::new(),
        |_| Ok(()),
    )
}

/// Broad search over the whole space, then a search over the most
/// important parameters with all others frozen at the first-stage best.
/// The result is the best trial of both stages combined.
#[allow(clippy::too_many_arguments)]
pub fn two_stage_resume<O, F>(
    objective: &mut O,
    space: &ParameterSpace,
    budget1: usize,
    budget2: usize,
    seed: u64,
    cfg: &OptimizerConfig,
    history: Vec<TrialRecord>,
    mut on_trial: F,
) -> Result<TwoStageResult>
where
    O: Objective + ?Sized,
    F: FnMut(&TrialRecord) -> Result<()>,
{
    if budget2 > 0 && budget2 < cfg.initial_design {
        return Err(Error::InvalidArgument(format!(
            "second-stage budget {budget2} is below the initial design size {}",
            cfg.initial_design
        )));
    }
    let (first, second): (Vec<TrialRecord>, Vec<TrialRecord>) =
        history.into_iter().partition(|r| r.stage != 2);
    if !second.is_empty() && first.len() < budget1 {
        return Err(Error::TrialLog(
            "second-stage records before the first stage finished".into(),
        ));
    }

    let stage1 = optimize_resume(objective, space, budget1, seed, cfg, first, &mut on_trial)?;
    let importance = importance_analysis(space, &stage1.history, seed);
    if budget2 == 0 {
        return Ok(TwoStageResult {
            best: stage1.best.clone(),
            stage1_best: stage1.best,
            history: stage1.history,
            importance: importance.ok(),
            selected: Vec::new(),
        });
    }
    let importance = importance?;
    let selected = select_parameters(&importance);
    info!(
        "second stage frees {}",
        selected
            .iter()
            .map(|&i| importance.entries[i].name.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    );

    let sub = space.subspace(&selected)?;
    let base = stage1.best.params.clone();
    let expand = |values: &[f64]| -> Vec<f64> {
        let mut full = base.clone();
        for (k, &i) in selected.iter().enumerate() {
            full[i] = values[k];
        }
        full
    };
    let offset = stage1.history.len();
    let to_full = |r: &TrialRecord| -> Result<TrialRecord> {
        let params = expand(&r.params);
        Ok(TrialRecord {
            trial: r.trial + offset,
            stage: 2,
            normalized: space.normalize(&params)?,
            params,
            ..r.clone()
        })
    };
    let projected: Vec<TrialRecord> = second
        .iter()
        .map(|r| {
            let pick = |v: &[f64]| selected.iter().map(|&i| v[i]).collect::<Vec<f64>>();
            TrialRecord {
                trial: r.trial.wrapping_sub(offset),
                params: pick(&r.params),
                normalized: pick(&r.normalized),
                ..r.clone()
            }
        })
        .collect();

    let mut sub_objective =
        |values: &[f64]| -> Result<f64, PipelineFailure> { objective.evaluate(&expand(values)) };
    let stage2 = optimize_resume(
        &mut sub_objective,
        &sub,
        budget2,
        seed.wrapping_add(STAGE2_SEED),
        cfg,
        projected,
        |r| on_trial(&to_full(r)?),
    )
    .or_else(|e| match e {
        // Every second-stage trial failing still leaves the first stage.
        Error::AllTrialsFailed(_) => Ok(super::search::OptimizationResult {
            best: stage1.best.clone(),
            history: Vec::new(),
        }),
        e => Err(e),
    })?;

    let mut history = stage1.history;
    for r in &stage2.history {
        history.push(to_full(r)?);
    }
    let best = best_trial(&history).cloned().expect("stage one succeeded");
    Ok(TwoStageResult {
        best,
        history,
        stage1_best: stage1.best,
        importance: Some(importance),
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::{ParameterImportance, ParameterSpace};

    fn report(imp: &[f64]) -> ImportanceReport {
        ImportanceReport {
            entries: imp
                .iter()
                .enumerate()
                .map(|(i, &v)| ParameterImportance {
                    name: format!("x{i}"),
                    importance: v,
                    correlation: 0.0,
                    length_scale: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn selection_rule() {
        assert_eq!(
            select_parameters(&report(&[0.05, 0.6, 0.3, 0.05])),
            vec![1, 2]
        );
        assert_eq!(
            select_parameters(&report(&[0.25, 0.25, 0.25, 0.25])),
            vec![0, 1, 2]
        );
        assert_eq!(select_parameters(&report(&[0.2; 5])), vec![0, 1, 2]);
    }

    #[test]
    fn separable_objective_frees_its_parameters() {
        let space = ParameterSpace::segmentation_default();
        let cfg = OptimizerConfig {
            candidates: 512,
            ..Default::default()
        };
        for seed in 0..4 {
            let mut f = |x: &[f64]| {
                let u = space.normalize(x).unwrap();
                Ok(-(u[1] - 0.3).powi(2) - (u[5] - 0.8).powi(2))
            };
            let r = two_stage_optimize(&mut f, &space, 30, 10, seed, &cfg).unwrap();
            let mut sel = r.selected.clone();
            sel.sort();
            assert_eq!(sel, vec![1, 5], "seed {seed}");
            assert_eq!(r.history.len(), 40);
            assert!(r.best.objective >= r.stage1_best.objective);
            for t in r.history.iter().filter(|t| t.stage == 2) {
                for i in [0, 2, 3, 4, 6, 7] {
                    assert_eq!(t.params[i], r.stage1_best.params[i]);
                }
            }
        }
    }

    #[test]
    fn zero_second_budget_returns_stage_one() {
        let space = ParameterSpace::segmentation_default();
        let mut f = |x: &[f64]| Ok(-x[0]);
        let cfg = OptimizerConfig {
            candidates: 256,
            ..Default::default()
        };
        let r = two_stage_optimize(&mut f, &space, 12, 0, 1, &cfg).unwrap();
        assert_eq!(r.best, r.stage1_best);
        assert_eq!(r.history.len(), 12);
        assert!(r.selected.is_empty());
    }

    #[test]
    fn resumes_inside_second_stage() {
        let space = ParameterSpace::segmentation_default();
        let obj = |x: &[f64]| Ok::<f64, PipelineFailure>(-(x[2] - 0.4).powi(2) - 0.01 * x[3]);
        let cfg = OptimizerConfig {
            candidates: 256,
            ..Default::default()
        };
        let full = two_stage_optimize(&mut { obj }, &space, 12, 10, 9, &cfg).unwrap();
        let partial = full.history[..17].to_vec();
        let resumed =
            two_stage_resume(&mut { obj }, &space, 12, 10, 9, &cfg, partial, |_| Ok(())).unwrap();
        assert_eq!(resumed.history, full.history);
    }
}
