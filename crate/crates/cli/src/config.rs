//! Pipeline configuration.
//!
//! The file format is flat `key = value` text. Keys carry a dotted section
//! prefix (`segmentation.graph_edge_length = 1.0`); blank lines and lines
//! starting with `#` are ignored. Every key is optional, unknown or repeated
//! keys are errors, and the whole configuration is validated before any
//! command touches its inputs.
//!
//! ```text
//! seed = 7
//! preprocess.min_tile_density = 50
//! classifier.kind = oracle_with_noise
//! classifier.noise_rate = 0.2
//! segmentation.find_stems_min_points = 50
//! evaluation.iou_threshold = 0.5
//! optimize.budget = 40
//! optimize.range.graph_edge_length = 0.5 1.5
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use forestseg::evaluate::{Aggregation, DetectionMode, EvaluationOptions, PointMatching};
use forestseg::instance::SegmentationParams;
use forestseg::optimize::{OptimizerConfig, ParamKind, Parameter, ParameterSpace};
use forestseg::preprocess::PreprocessConfig;
use forestseg::semantic::{ClassifierKind, ClassifierSpec, DEFAULT_EXTERNAL_TIMEOUT};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSettings {
    pub space: ParameterSpace,
    /// First-stage trials.
    pub budget: usize,
    /// Second-stage trials; 0 runs a single stage.
    pub budget2: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for OptimizeSettings {
    fn default() -> Self {
        Self {
            space: ParameterSpace::segmentation_default(),
            budget: 50,
            budget2: 0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Default file locations; command-line arguments take precedence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Drives every random stream, including the classifier's.
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    pub classifier: ClassifierSpec,
    pub segmentation: SegmentationParams,
    pub evaluation: EvaluationOptions,
    pub optimize: OptimizeSettings,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            preprocess: PreprocessConfig::default(),
            classifier: ClassifierSpec::oracle(),
            segmentation: SegmentationParams::default(),
            evaluation: EvaluationOptions::default(),
            optimize: OptimizeSettings::default(),
            paths: Paths::default(),
        }
    }
}

struct Entry {
    line: usize,
    value: String,
}

/// Raw key/value pairs with their line numbers.
struct Table {
    source: PathBuf,
    entries: BTreeMap<String, Entry>,
}

impl Table {
    fn parse(text: &str, source: &Path) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            // `#` opens a comment at line start or after whitespace.
            let uncommented = match raw.find(" #").or_else(|| raw.find("\t#")) {
                Some(i) => &raw[..i],
                None => raw,
            };
            let trimmed = uncommented.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(config_err(source, line, "expected `key = value`"));
            };
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(config_err(source, line, format!("malformed key `{key}`")));
            }
            let entry = Entry {
                line,
                value: value.trim().to_string(),
            };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(config_err(
                    source,
                    line,
                    format!("`{key}` already set on line {}", prev.line),
                ));
            }
        }
        Ok(Self {
            source: source.to_path_buf(),
            entries,
        })
    }

    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    /// Removes and returns every key under `prefix`, suffix first.
    fn take_prefixed(&mut self, prefix: &str) -> Vec<(String, Entry)> {
        let keys: Vec<String> = self
            .entries
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect();
        keys.into_iter()
            .map(|k| {
                let e = self.entries.remove(&k).expect("listed key");
                (k[prefix.len()..].to_string(), e)
            })
            .collect()
    }

    fn parse_value<T: FromStr>(&self, key: &str, e: &Entry) -> Result<T, CliError> {
        e.value.parse().map_err(|_| {
            config_err(
                &self.source,
                e.line,
                format!("`{key}`: cannot parse `{}`", e.value),
            )
        })
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<(), CliError> {
        if let Some(e) = self.take(key) {
            *slot = self.parse_value(key, &e)?;
        }
        Ok(())
    }

    fn list<T: FromStr>(&self, key: &str, e: &Entry) -> Result<Vec<T>, CliError> {
        e.value
            .split_whitespace()
            .map(|v| {
                v.parse().map_err(|_| {
                    config_err(&self.source, e.line, format!("`{key}`: cannot parse `{v}`"))
                })
            })
            .collect()
    }

    fn triple(&mut self, key: &str, slot: &mut [f64; 3]) -> Result<(), CliError> {
        if let Some(e) = self.take(key) {
            let v: Vec<f64> = self.list(key, &e)?;
            *slot = match v.as_slice() {
                [x] => [*x; 3],
                [x, y, z] => [*x, *y, *z],
                _ => {
                    return Err(config_err(
                        &self.source,
                        e.line,
                        format!("`{key}` takes one or three numbers"),
                    ))
                }
            };
        }
        Ok(())
    }

    fn err(&self, e: &Entry, msg: impl Into<String>) -> CliError {
        config_err(&self.source, e.line, msg)
    }
}

fn config_err(source: &Path, line: usize, msg: impl Into<String>) -> CliError {
    CliError::Config(format!("{}:{line}: {}", source.display(), msg.into()))
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Parses and validates; `source` only labels error messages.
    pub fn parse(text: &str, source: &Path) -> Result<Self, CliError> {
        let mut t = Table::parse(text, source)?;
        let mut cfg = PipelineConfig::default();
        t.set("seed", &mut cfg.seed)?;

        let p = &mut cfg.preprocess;
        t.set("preprocess.tile_size", &mut p.tile_size)?;
        t.set("preprocess.min_tile_density", &mut p.min_tile_density)?;
        t.set("preprocess.subsample", &mut p.subsample)?;
        t.set(
            "preprocess.subsampling_min_spacing",
            &mut p.subsampling_min_spacing,
        )?;
        t.triple("preprocess.sample_box_size", &mut p.sample_box_size_m)?;
        t.triple("preprocess.sample_box_overlap", &mut p.sample_box_overlap)?;
        t.set("preprocess.min_points_per_box", &mut p.min_points_per_box)?;
        t.set("preprocess.max_points_per_box", &mut p.max_points_per_box)?;

        cfg.classifier = parse_classifier(&mut t)?;

        for name in SegmentationParams::NAMES {
            let key = format!("segmentation.{name}");
            if let Some(e) = t.take(&key) {
                let v: f64 = t.parse_value(&key, &e)?;
                if name == "find_stems_min_points" && v.fract() != 0.0 {
                    return Err(t.err(&e, format!("`{key}` must be an integer")));
                }
                cfg.segmentation
                    .set(name, v)
                    .map_err(|err| t.err(&e, err.to_string()))?;
            }
        }

        cfg.evaluation = parse_evaluation(&mut t)?;
        cfg.optimize = parse_optimize(&mut t)?;

        let paths = &mut cfg.paths;
        for (key, slot) in [
            ("paths.input", &mut paths.input),
            ("paths.output", &mut paths.output),
            ("paths.truth", &mut paths.truth),
            ("paths.dataset", &mut paths.dataset),
            ("paths.log", &mut paths.log),
        ] {
            if let Some(e) = t.take(key) {
                *slot = Some(PathBuf::from(e.value));
            }
        }

        if let Some((key, e)) = t.entries.iter().next() {
            return Err(config_err(source, e.line, format!("unknown key `{key}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |what: &str, e: forestseg::Error| CliError::Config(format!("{what}: {e}"));
        self.preprocess
            .validate()
            .map_err(|e| invalid("preprocess", e))?;
        self.classifier
            .validate()
            .map_err(|e| invalid("classifier", e))?;
        self.segmentation
            .validate()
            .map_err(|e| invalid("segmentation", e))?;
        if let PointMatching::Nearest { tolerance } = self.evaluation.matching {
            if !(tolerance.is_finite() && tolerance >= 0.0) {
                return Err(CliError::Config(format!(
                    "evaluation.tolerance must be non-negative, got {tolerance}"
                )));
            }
        }
        if let DetectionMode::IouThreshold(t) = self.evaluation.detection {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Config(format!(
                    "evaluation.iou_threshold must lie in [0, 1], got {t}"
                )));
            }
        }
        let o = &self.optimize;
        o.optimizer.validate().map_err(|e| invalid("optimize", e))?;
        if o.budget < o.optimizer.initial_design {
            return Err(CliError::Config(format!(
                "optimize.budget {} is below optimize.initial_design {}",
                o.budget, o.optimizer.initial_design
            )));
        }
        if o.budget2 > 0 && o.budget2 < o.optimizer.initial_design {
            return Err(CliError::Config(format!(
                "optimize.budget2 {} is below optimize.initial_design {}",
                o.budget2, o.optimizer.initial_design
            )));
        }
        o.space
            .apply(
                &o.space
                    .denormalize(&vec![0.5; o.space.dim()])
                    .expect("own dimension"),
                &self.segmentation,
            )
            .map_err(|e| invalid("optimize space", e))?;
        Ok(())
    }

    /// Segmentation parameters as config lines, loadable with `--config`.
    pub fn segmentation_lines(p: &SegmentationParams) -> String {
        let mut out = String::new();
        for name in SegmentationParams::NAMES {
            let v = p.get(name).expect("known name");
            let _ = writeln!(out, "segmentation.{name} = {v}");
        }
        out
    }
}

fn parse_classifier(t: &mut Table) -> Result<ClassifierSpec, CliError> {
    let kind = t.take("classifier.kind");
    let noise = t.take("classifier.noise_rate");
    let command = t.take("classifier.command");
    let timeout = t.take("classifier.timeout_s");

    let name = kind.as_ref().map_or("oracle", |e| e.value.as_str());
    let unused = |e: &Option<Entry>, key: &str| match e {
        Some(e) => Err(t.err(e, format!("`{key}` does not apply to classifier `{name}`"))),
        None => Ok(()),
    };
    let spec = match name {
        "oracle" => {
            unused(&noise, "classifier.noise_rate")?;
            unused(&command, "classifier.command")?;
            unused(&timeout, "classifier.timeout_s")?;
            ClassifierSpec::oracle()
        }
        "oracle_with_noise" => {
            unused(&command, "classifier.command")?;
            unused(&timeout, "classifier.timeout_s")?;
            let rate = match &noise {
                Some(e) => t.parse_value("classifier.noise_rate", e)?,
                None => 0.0,
            };
            ClassifierSpec::noisy(rate, 0)
        }
        "external" => {
            unused(&noise, "classifier.noise_rate")?;
            let Some(cmd) = &command else {
                return Err(t.err(
                    kind.as_ref().expect("named explicitly"),
                    "external classifier needs `classifier.command`",
                ));
            };
            let mut spec = ClassifierSpec::external(cmd.value.clone());
            if let (Some(e), ClassifierKind::External { timeout: slot, .. }) =
                (&timeout, &mut spec.kind)
            {
                let secs: f64 = t.parse_value("classifier.timeout_s", e)?;
                if !(secs.is_finite() && secs > 0.0) {
                    return Err(t.err(e, "`classifier.timeout_s` must be positive"));
                }
                *slot = Duration::from_secs_f64(secs);
            } else if let ClassifierKind::External { timeout: slot, .. } = &mut spec.kind {
                *slot = DEFAULT_EXTERNAL_TIMEOUT;
            }
            spec
        }
        other => {
            return Err(t.err(
                kind.as_ref().expect("named explicitly"),
                format!("unknown classifier `{other}` (oracle, oracle_with_noise, external)"),
            ))
        }
    };
    Ok(spec)
}

fn parse_evaluation(t: &mut Table) -> Result<EvaluationOptions, CliError> {
    let mut opts = EvaluationOptions::default();
    let tolerance = t.take("evaluation.tolerance");
    match t.take("evaluation.matching") {
        Some(e) if e.value == "same_index" => {
            if let Some(tol) = &tolerance {
                return Err(t.err(
                    tol,
                    "`evaluation.tolerance` needs `evaluation.matching = nearest`",
                ));
            }
            opts.matching = PointMatching::SameIndex;
        }
        Some(e) if e.value != "nearest" => {
            return Err(t.err(
                &e,
                format!("unknown matching `{}` (nearest, same_index)", e.value),
            ))
        }
        _ => {
            if let Some(e) = &tolerance {
                opts.matching = PointMatching::Nearest {
                    tolerance: t.parse_value("evaluation.tolerance", e)?,
                };
            }
        }
    }
    let threshold = t.take("evaluation.iou_threshold");
    match t.take("evaluation.detection") {
        Some(e) if e.value == "assignment" => {
            if let Some(th) = &threshold {
                return Err(t.err(
                    th,
                    "`evaluation.iou_threshold` needs `evaluation.detection = iou`",
                ));
            }
            opts.detection = DetectionMode::Assignment;
        }
        Some(e) if e.value != "iou" => {
            return Err(t.err(
                &e,
                format!("unknown detection mode `{}` (iou, assignment)", e.value),
            ))
        }
        _ => {
            if let Some(e) = &threshold {
                opts.detection =
                    DetectionMode::IouThreshold(t.parse_value("evaluation.iou_threshold", e)?);
            }
        }
    }
    if let Some(e) = t.take("evaluation.aggregation") {
        opts.aggregation = match e.value.as_str() {
            "hierarchical" => Aggregation::Hierarchical,
            "pooled" => Aggregation::Pooled,
            other => {
                return Err(t.err(
                    &e,
                    format!("unknown aggregation `{other}` (hierarchical, pooled)"),
                ))
            }
        };
    }
    Ok(opts)
}

fn parse_optimize(t: &mut Table) -> Result<OptimizeSettings, CliError> {
    let mut s = OptimizeSettings::default();
    t.set("optimize.budget", &mut s.budget)?;
    t.set("optimize.budget2", &mut s.budget2)?;
    let o = &mut s.optimizer;
    t.set("optimize.initial_design", &mut o.initial_design)?;
    t.set("optimize.candidates", &mut o.candidates)?;
    t.set("optimize.refine", &mut o.refine)?;
    t.set("optimize.failure_penalty", &mut o.failure_penalty)?;
    t.set("optimize.record_wall_time", &mut o.record_wall_time)?;
    t.set("optimize.ard", &mut o.hyper.ard)?;
    t.set("optimize.restarts", &mut o.hyper.restarts)?;

    let mut params: Vec<Parameter> = match t.take("optimize.space") {
        None => ParameterSpace::segmentation_default().params().to_vec(),
        Some(e) => match e.value.as_str() {
            "continuous" => ParameterSpace::segmentation_default().params().to_vec(),
            "grid" => ParameterSpace::segmentation_grid().params().to_vec(),
            other => return Err(t.err(&e, format!("unknown space `{other}` (continuous, grid)"))),
        },
    };
    for (name, e) in t.take_prefixed("optimize.range.") {
        let key = format!("optimize.range.{name}");
        let Some(p) = params.iter_mut().find(|p| p.name == name) else {
            return Err(t.err(&e, format!("unknown segmentation parameter `{name}`")));
        };
        let v: Vec<f64> = t.list(&key, &e)?;
        let [lo, hi] = v[..] else {
            return Err(t.err(&e, format!("`{key}` takes two numbers")));
        };
        p.kind = if name == "find_stems_min_points" {
            if lo.fract() != 0.0 || hi.fract() != 0.0 {
                return Err(t.err(&e, format!("`{key}` bounds must be integers")));
            }
            ParamKind::Integer {
                lo: lo as i64,
                hi: hi as i64,
            }
        } else {
            ParamKind::Continuous { lo, hi }
        };
    }
    for (name, e) in t.take_prefixed("optimize.grid.") {
        let key = format!("optimize.grid.{name}");
        let Some(p) = params.iter_mut().find(|p| p.name == name) else {
            return Err(t.err(&e, format!("unknown segmentation parameter `{name}`")));
        };
        p.kind = ParamKind::Discrete(t.list(&key, &e)?);
    }
    if let Some(e) = t.take("optimize.params") {
        let names: Vec<String> = t.list("optimize.params", &e)?;
        for n in &names {
            if !params.iter().any(|p| &p.name == n) {
                return Err(t.err(&e, format!("unknown segmentation parameter `{n}`")));
            }
        }
        params.retain(|p| names.contains(&p.name));
    }
    s.space = ParameterSpace::new(params)
        .map_err(|err| CliError::Config(format!("optimize space: {err}")))?;
    Ok(s)
}
