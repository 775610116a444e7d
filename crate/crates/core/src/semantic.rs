//! Per-point semantic classification stage.
//!
//! The oracle classifiers copy ground-truth labels (optionally corrupted at a
//! controlled rate) so downstream stages can be studied against a known
//! semantic quality. The external classifier runs any program that speaks
//! the interchange format:
//!
//! ```text
//! <command> --input <path> --output <path>
//! ```
//!
//! The input file carries the cloud with whatever labels it already has; the
//! output file must hold the same points, in order, with a `sem` column.

use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{LabeledCloud, SemanticLabel};
use crate::error::{Error, Result};
use crate::io;

pub const DEFAULT_EXTERNAL_TIMEOUT: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierKind {
    Oracle,
    OracleWithNoise { noise_rate: f64 },
    External { command: String, timeout: Duration },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn oracle() -> Self {
        Self {
            kind: ClassifierKind::Oracle,
            seed: 0,
        }
    }

    pub fn noisy(noise_rate: f64, seed: u64) -> Self {
        Self {
            kind: ClassifierKind::OracleWithNoise { noise_rate },
            seed,
        }
    }

    pub fn external(command: impl Into<String>) -> Self {
        Self {
            kind: ClassifierKind::External {
                command: command.into(),
                timeout: DEFAULT_EXTERNAL_TIMEOUT,
            },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ClassifierKind::OracleWithNoise { noise_rate } if !(0.0..=1.0).contains(noise_rate) => {
                Err(Error::InvalidArgument(format!(
                    "noise_rate must lie in [0, 1], got {noise_rate}"
                )))
            }
            ClassifierKind::External { command, .. }
                if command.split_whitespace().next().is_none() =>
            {
                Err(Error::InvalidArgument(
                    "external classifier command is empty".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Returns a copy of `cloud` with a semantic label on every point.
pub fn classify(cloud: &LabeledCloud, spec: &ClassifierSpec) -> Result<LabeledCloud> {
    spec.validate()?;
    cloud.validate()?;
    match &spec.kind {
        ClassifierKind::Oracle => {
            require_truth(cloud)?;
            Ok(cloud.clone())
        }
        ClassifierKind::OracleWithNoise { noise_rate } => {
            let truth = require_truth(cloud)?;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let labels = truth
                .iter()
                .map(|&l| corrupt(l, *noise_rate, &mut rng))
                .collect();
            let mut out = cloud.clone();
            out.semantic = Some(labels);
            Ok(out)
        }
        ClassifierKind::External { command, timeout } => run_external(cloud, command, *timeout),
    }
}

fn require_truth(cloud: &LabeledCloud) -> Result<&[SemanticLabel]> {
    cloud.semantic.as_deref().ok_or(Error::MissingLabels(
        "oracle classifier needs ground-truth semantic labels",
    ))
}

fn corrupt(label: SemanticLabel, rate: f64, rng: &mut impl Rng) -> SemanticLabel {
    if rate > 0.0 && rng.random::<f64>() < rate {
        let k = rng.random_range(0..SemanticLabel::ALL.len() - 1);
        let others = SemanticLabel::ALL.iter().copied().filter(|&c| c != label);
        others.into_iter().nth(k).expect("three other classes")
    } else {
        label
    }
}

fn run_external(cloud: &LabeledCloud, command: &str, timeout: Duration) -> Result<LabeledCloud> {
    let dir = tempfile::tempdir()
        .map_err(|e| Error::External(format!("cannot create scratch dir: {e}")))?;
    let input = dir.path().join("input.txt");
    let output = dir.path().join("output.txt");
    io::write_cloud(&input, cloud)?;

    let mut parts = command.split_whitespace();
    let program = parts.next().expect("validated non-empty");
    let mut child = Command::new(program)
        .args(parts)
        .arg("--input")
        .arg(&input)
        .arg("--output")
        .arg(&output)
        .stdin(Stdio::null())
        .spawn()
        .map_err(|e| Error::External(format!("cannot start `{program}`: {e}")))?;

    let deadline = Instant::now() + timeout;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::External(format!(
                    "`{program}` timed out after {timeout:?}"
                )));
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(Error::External(format!("waiting on `{program}`: {e}"))),
        }
    };
    if !status.success() {
        return Err(Error::External(format!("`{program}` exited with {status}")));
    }
    let result = read_result(&output).map_err(|e| Error::External(e.to_string()))?;
    merge_result(cloud, result)
}

fn read_result(path: &Path) -> Result<LabeledCloud> {
    io::read_cloud(path)
}

fn merge_result(cloud: &LabeledCloud, result: LabeledCloud) -> Result<LabeledCloud> {
    if result.len() != cloud.len() {
        return Err(Error::External(format!(
            "returned {} points, expected {}",
            result.len(),
            cloud.len()
        )));
    }
    let labels = result
        .semantic
        .ok_or_else(|| Error::External("returned cloud has no sem column".into()))?;
    let tol = 1e-5;
    if let Some(i) = (0..cloud.len()).find(|&i| {
        let (a, b) = (cloud.points[i], result.points[i]);
        (a.x - b.x).abs() > tol || (a.y - b.y).abs() > tol || (a.z - b.z).abs() > tol
    }) {
        return Err(Error::External(format!(
            "returned point {i} does not match the input point"
        )));
    }
    let mut out = cloud.clone();
    out.semantic = Some(labels);
    Ok(out)
}
