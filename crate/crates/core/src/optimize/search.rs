use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, PipelineFailure, Result, Stage};

use super::acquisition::{expected_improvement, expected_improvement_with_gradient};
use super::ascent::maximize_box;
use super::gp::{fit_hyperparameters, GpModel, HyperFit, PriorMean};
use super::space::ParameterSpace;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub stage: String,
    pub message: String,
}

impl From<&PipelineFailure> for TrialFailure {
    fn from(f: &PipelineFailure) -> Self {
        Self {
            stage: f.stage.as_str().to_string(),
            message: f.message.clone(),
        }
    }
}

fn first_stage() -> u8 {
    1
}

/// One optimiser iteration. Failed trials keep their parameters but carry
/// no objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    #[serde(default = "first_stage")]
    pub stage: u8,
    /// Parameter values in original units.
    pub params: Vec<f64>,
    /// The same values mapped to [0, 1].
    pub normalized: Vec<f64>,
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<TrialFailure>,
    /// Seconds; only recorded on request since it breaks replay identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

impl TrialRecord {
    pub fn succeeded(&self) -> bool {
        self.objective.is_some()
    }
}

/// A black-box objective to maximise. Returning a [`PipelineFailure`]
/// marks the trial as failed without stopping the search.
pub trait Objective {
    fn evaluate(&mut self, params: &[f64]) -> Result<f64, PipelineFailure>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<f64, PipelineFailure>,
{
    fn evaluate(&mut self, params: &[f64]) -> Result<f64, PipelineFailure> {
        self(params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Latin-hypercube points evaluated before the surrogate takes over.
    pub initial_design: usize,
    /// Random candidates scored by expected improvement per suggestion.
    pub candidates: usize,
    /// Best candidates further refined by gradient ascent.
    pub refine: usize,
    pub hyper: HyperFit,
    /// Failed trials enter the surrogate at `min(observed) - failure_penalty`.
    pub failure_penalty: f64,
    pub record_wall_time: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            initial_design: 10,
            candidates: 2048,
            refine: 8,
            hyper: HyperFit {
                ard: false,
                prior_mean: PriorMean::Minimum,
                ..HyperFit::default()
            },
            failure_penalty: 0.05,
            record_wall_time: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_design < 2 {
            return Err(Error::InvalidArgument(
                "initial design needs at least 2 points".into(),
            ));
        }
        if self.candidates == 0 {
            return Err(Error::InvalidArgument(
                "candidate count must be positive".into(),
            ));
        }
        if !(self.failure_penalty.is_finite() && self.failure_penalty >= 0.0) {
            return Err(Error::InvalidArgument(
                "failure penalty must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best: TrialRecord,
    pub history: Vec<TrialRecord>,
}

/// Successful trial with the highest objective; ties go to the earliest.
pub fn best_trial(history: &[TrialRecord]) -> Option<&TrialRecord> {
    history.iter().filter(|t| t.succeeded()).fold(
        None,
        |best: Option<&TrialRecord>, t| match best {
            Some(b) if b.objective >= t.objective => Some(b),
            _ => Some(t),
        },
    )
}

/// Running maximum of the objective, `None` until the first success.
pub fn best_so_far(history: &[TrialRecord]) -> Vec<Option<f64>> {
    let mut best: Option<f64> = None;
    history
        .iter()
        .map(|t| {
            if let Some(v) = t.objective {
                best = Some(best.map_or(v, |b| b.max(v)));
            }
            best
        })
        .collect()
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` stratified points in `[0, 1]^d`.
pub fn latin_hypercube(n: usize, d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; d]; n];
    for k in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            strata.swap(i, rng.random_range(0..=i));
        }
        for (row, s) in out.iter_mut().zip(strata) {
            row[k] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    out
}

/// Unit-cube initial design of a run; stream 0 of the run seed.
pub fn initial_design(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    latin_hypercube(n, dim, &mut rng_for(seed, 0))
}

/// Surrogate training data: successes as observed, failures at the penalty.
pub fn surrogate_data(history: &[TrialRecord], penalty: f64) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
    let min = history
        .iter()
        .filter_map(|t| t.objective)
        .min_by(f64::total_cmp)?;
    let floor = min - penalty;
    Some(
        history
            .iter()
            .map(|t| (t.normalized.clone(), t.objective.unwrap_or(floor)))
            .unzip(),
    )
}

/// Fits the surrogate to a history, `None` when it holds no success yet.
pub fn fit_surrogate(
    history: &[TrialRecord],
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<Option<GpModel>> {
    let Some((x, y)) = surrogate_data(history, cfg.failure_penalty) else {
        return Ok(None);
    };
    if x.len() < 2 {
        return Ok(None);
    }
    let hyper = HyperFit {
        seed: rng_for(seed, (1 << 32) | history.len() as u64).random(),
        ..cfg.hyper
    };
    fit_hyperparameters(x, y, &hyper).map(Some)
}

fn key(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Next parameter vector (original units) for trial `history.len()`.
///
/// The first `initial_design` trials follow the Latin-hypercube design.
/// Afterwards expected improvement under `model` is maximised over random
/// candidates, the best of which are refined by gradient ascent; every
/// candidate is snapped to the admissible grid before scoring. Without a
/// model the first unevaluated candidate is taken. Already evaluated
/// vectors are never returned.
pub fn suggest_next(
    space: &ParameterSpace,
    model: Option<&GpModel>,
    history: &[TrialRecord],
    seed: u64,
    cfg: &OptimizerConfig,
) -> Result<Vec<f64>> {
    let d = space.dim();
    let t = history.len();
    let evaluated: HashSet<Vec<u64>> = history.iter().map(|r| key(&r.params)).collect();
    if let Some(card) = space.cardinality() {
        if evaluated.len() as u128 >= card {
            return Err(Error::Exhausted(evaluated.len()));
        }
    }
    let fresh = |v: &Vec<f64>| !evaluated.contains(&key(v));

    if t < cfg.initial_design {
        let v = space.denormalize(&initial_design(d, cfg.initial_design, seed)[t])?;
        if fresh(&v) {
            return Ok(v);
        }
    }

    let mut rng = rng_for(seed, t as u64 + 1);
    let mut starts = latin_hypercube(cfg.candidates, d, &mut rng);

    let Some(model) = model else {
        for u in &starts {
            let v = space.denormalize(u)?;
            if fresh(&v) {
                return Ok(v);
            }
        }
        return fallback(space, None, &evaluated, &mut rng);
    };

    let incumbent = history.iter().filter(|r| r.succeeded()).max_by(|a, b| {
        a.objective
            .unwrap()
            .total_cmp(&b.objective.unwrap())
            .then(b.trial.cmp(&a.trial))
    });
    let (lo, hi) = (vec![0.0; d], vec![1.0; d]);

    let best = model
        .targets()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let score = |u: &[f64]| -> (Vec<f64>, f64) {
        let v = space.denormalize(u).expect("dimension checked");
        let s = expected_improvement(
            model,
            &space.normalize(&v).expect("dimension checked"),
            best,
        )
        .unwrap_or(0.0);
        (v, s)
    };
    let mut scored: Vec<(Vec<f64>, f64)> = starts.par_iter().map(|u| score(u)).collect();

    // Gradient refinement from the best raw candidates and around the incumbent.
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].1.total_cmp(&scored[a].1).then(a.cmp(&b)));
    let mut seeds: Vec<Vec<f64>> = order
        .iter()
        .take(cfg.refine)
        .map(|&i| starts[i].clone())
        .collect();
    if let Some(inc) = incumbent {
        for _ in 0..cfg.refine.min(4) {
            seeds.push(
                inc.normalized
                    .iter()
                    .enumerate()
                    .map(|(k, x)| (x + rng.random_range(-0.05..0.05)).clamp(lo[k], hi[k]))
                    .collect(),
            );
        }
    }
    let refined: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|s| {
            let f = |u: &[f64]| expected_improvement_with_gradient(model, u, best).ok();
            maximize_box(f, s, &lo, &hi, 50, 0.05).0
        })
        .collect();
    scored.extend(refined.par_iter().map(|u| score(u)).collect::<Vec<_>>());
    starts.extend(refined);

    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].1.total_cmp(&scored[a].1).then(a.cmp(&b)));
    for i in order {
        if fresh(&scored[i].0) {
            debug!("trial {t}: expected improvement {:.3e}", scored[i].1);
            return Ok(scored[i].0.clone());
        }
    }
    fallback(space, Some((model, best)), &evaluated, &mut rng)
}

/// Last resort once every candidate collided with an evaluated vector.
fn fallback(
    space: &ParameterSpace,
    model: Option<(&GpModel, f64)>,
    evaluated: &HashSet<Vec<u64>>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    const ENUMERATION_LIMIT: u128 = 1 << 20;
    match space.cardinality() {
        Some(card) if card <= ENUMERATION_LIMIT => {
            let mut best: Option<(Vec<f64>, f64)> = None;
            for k in 0..card {
                let v = space.enumerate_at(k);
                if evaluated.contains(&key(&v)) {
                    continue;
                }
                let Some((m, b)) = model else {
                    return Ok(v);
                };
                let s = expected_improvement(m, &space.normalize(&v)?, b)?;
                if best.as_ref().is_none_or(|(_, bs)| s > *bs) {
                    best = Some((v, s));
                }
            }
            best.map(|(v, _)| v)
                .ok_or(Error::Exhausted(evaluated.len()))
        }
        _ => {
            for _ in 0..10_000 {
                let u: Vec<f64> = (0..space.dim()).map(|_| rng.random()).collect();
                let v = space.denormalize(&u)?;
                if !evaluated.contains(&key(&v)) {
                    return Ok(v);
                }
            }
            Err(Error::Exhausted(evaluated.len()))
        }
    }
}

/// Runs a fresh search; see [`optimize_resume`].
pub fn optimize<O: Objective + ?Sized>(
    objective: &mut O,
    space: &ParameterSpace,
    budget: usize,
    seed: u64,
    cfg: &OptimizerConfig,
) -> Result<OptimizationResult> {
    optimize_resume(objective, space, budget, seed, cfg, Vec::new(), |_| Ok(()))
}

/// Sequential Bayesian optimisation continuing from `history`.
///
/// Each trial depends only on the run seed, its index and the trials
/// before it, so resuming a truncated history reproduces an uninterrupted
/// run. `on_trial` sees every new record before the next suggestion.
/// Running out of a finite space ends the run early.
pub fn optimize_resume<O, F>(
    objective: &mut O,
    space: &ParameterSpace,
    budget: usize,
    seed: u64,
    cfg: &OptimizerConfig,
    mut history: Vec<TrialRecord>,
    mut on_trial: F,
) -> Result<OptimizationResult>
where
    O: Objective + ?Sized,
    F: FnMut(&TrialRecord) -> Result<()>,
{
    cfg.validate()?;
    if budget < cfg.initial_design {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} is below the initial design size {}",
            cfg.initial_design
        )));
    }
    for (i, r) in history.iter().enumerate() {
        if r.trial != i || r.params.len() != space.dim() || r.normalized.len() != space.dim() {
            return Err(Error::TrialLog(format!(
                "record {i} does not continue this search"
            )));
        }
    }
    let stage = history.first().map_or(1, |r| r.stage);

    for t in history.len()..budget {
        let model = if t >= cfg.initial_design {
            match fit_surrogate(&history, cfg, seed) {
                Ok(m) => m,
                Err(e) => {
                    warn!("trial {t}: surrogate fit failed ({e}); sampling at random");
                    None
                }
            }
        } else {
            None
        };
        let params = match suggest_next(space, model.as_ref(), &history, seed, cfg) {
            Ok(p) => p,
            Err(Error::Exhausted(n)) => {
                info!("search space exhausted after {n} trials");
                break;
            }
            Err(e) => return Err(e),
        };
        let start = Instant::now();
        let outcome = objective.evaluate(&params).and_then(|v| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(PipelineFailure::new(
                    Stage::Evaluate,
                    format!("objective is not finite ({v})"),
                ))
            }
        });
        let elapsed = start.elapsed().as_secs_f64();
        let record = TrialRecord {
            trial: t,
            stage,
            normalized: space.normalize(&params)?,
            params,
            objective: outcome.as_ref().ok().copied(),
            failure: outcome.as_ref().err().map(TrialFailure::from),
            wall_time: cfg.record_wall_time.then_some(elapsed),
        };
        match &record.failure {
            None => info!("trial {t}: objective {:.6}", record.objective.unwrap()),
            Some(f) => warn!("trial {t}: failed at {}: {}", f.stage, f.message),
        }
        on_trial(&record)?;
        history.push(record);
    }

    let best = best_trial(&history)
        .cloned()
        .ok_or(Error::AllTrialsFailed(history.len()))?;
    Ok(OptimizationResult { best, history })
}

/// Append-only trial history, one JSON record per line.
#[derive(Debug)]
pub struct TrialLog {
    path: PathBuf,
    file: File,
}

fn parse_log(text: &str, path: &Path) -> Result<(Vec<TrialRecord>, usize)> {
    let mut records = Vec::new();
    let mut valid = 0;
    let mut offset = 0;
    for (no, chunk) in text.split_inclusive('\n').enumerate() {
        offset += chunk.len();
        let complete = chunk.ends_with('\n');
        let line = chunk.trim();
        if line.is_empty() {
            valid = offset;
            continue;
        }
        match serde_json::from_str::<TrialRecord>(line) {
            Ok(r) => {
                records.push(r);
                valid = offset;
            }
            // An interrupted write leaves a partial last line; drop it.
            Err(_) if !complete => break,
            Err(e) => {
                return Err(Error::TrialLog(format!(
                    "{}:{}: {e}",
                    path.display(),
                    no + 1
                )))
            }
        }
    }
    Ok((records, valid))
}

pub fn read_trial_log(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_log(&text, path)?.0)
}

impl TrialLog {
    /// Starts an empty log, replacing any existing file.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, file })
    }

    /// Opens a log for appending and returns the records it already holds.
    /// A partial trailing record is discarded.
    pub fn resume(path: impl AsRef<Path>) -> Result<(Self, Vec<TrialRecord>)> {
        let path = path.as_ref().to_path_buf();
        if !path.exists() {
            return Ok((Self::create(&path)?, Vec::new()));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let (records, valid) = parse_log(&text, &path)?;
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        file.set_len(valid as u64)
            .map_err(|e| Error::io(&path, e))?;
        let mut file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if valid > 0 && !text[..valid].ends_with('\n') {
            file.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        Ok((Self { path, file }, records))
    }

    pub fn append(&mut self, record: &TrialRecord) -> Result<()> {
        let mut line = serde_json::to_string(record).map_err(|e| Error::TrialLog(e.to_string()))?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
