use crate::error::{Error, Result};

use super::gp::{fit_hyperparameters, HyperFit};
use super::search::TrialRecord;
use super::space::ParameterSpace;

pub const MIN_TRIALS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterImportance {
    pub name: String,
    /// Share of the inverse squared length scales, summing to 1.
    pub importance: f64,
    /// Pearson correlation of the normalised value with the objective.
    pub correlation: f64,
    pub length_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    /// In parameter-space order.
    pub entries: Vec<ParameterImportance>,
}

impl ImportanceReport {
    /// Entry indices by decreasing importance; ties keep space order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        idx.sort_by(|&a, &b| {
            self.entries[b]
                .importance
                .total_cmp(&self.entries[a].importance)
                .then(a.cmp(&b))
        });
        idx
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Relevance of each parameter from the successful trials of a history.
///
/// A GP with one length scale per dimension is refit to the trials; the
/// importance of a parameter is its inverse squared length scale divided
/// by the sum over all parameters.
pub fn importance_analysis(
    space: &ParameterSpace,
    history: &[TrialRecord],
    seed: u64,
) -> Result<ImportanceReport> {
    let ok: Vec<&TrialRecord> = history.iter().filter(|t| t.succeeded()).collect();
    if ok.len() < MIN_TRIALS {
        return Err(Error::InsufficientTrials {
            needed: MIN_TRIALS,
            have: ok.len(),
        });
    }
    let d = space.dim();
    if let Some(t) = ok.iter().find(|t| t.normalized.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            got: t.normalized.len(),
        });
    }
    let x: Vec<Vec<f64>> = ok.iter().map(|t| t.normalized.clone()).collect();
    let y: Vec<f64> = ok.iter().map(|t| t.objective.unwrap()).collect();
    let model = fit_hyperparameters(
        x.clone(),
        y.clone(),
        &HyperFit {
            ard: true,
            seed,
            ..HyperFit::default()
        },
    )?;
    let ls = model.kernel().length_scales(d);
    let inv: Vec<f64> = ls.iter().map(|l| 1.0 / (l * l)).collect();
    let total: f64 = inv.iter().sum();
    let entries = space
        .names()
        .into_iter()
        .enumerate()
        .map(|(k, name)| {
            let col: Vec<f64> = x.iter().map(|r| r[k]).collect();
            ParameterImportance {
                name: name.to_string(),
                importance: inv[k] / total,
                correlation: pearson(&col, &y),
                length_scale: ls[k],
            }
        })
        .collect();
    Ok(ImportanceReport { entries })
}
