//! `forestseg`: tile, classify, segment, evaluate and tune forest point clouds.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 pipeline failure,
//! 5 external classifier failure. Verbosity follows `FORESTSEG_LOG`
//! (`error`, `warn`, `info`, `debug`, `trace`).

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::PipelineConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "forestseg",
    version,
    about = "Individual tree segmentation of forest point clouds"
)]
struct Cli {
    /// Pipeline configuration (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Tsv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tile, drop sparse tiles and voxel-downsample a cloud.
    Preprocess {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also cut the result into sample boxes under this directory.
        #[arg(long, value_name = "DIR")]
        boxes: Option<PathBuf>,
    },
    /// Assign semantic labels.
    Classify {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Classify, then split wood and vegetation into trees.
    Segment {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score predicted trees against ground truth. Both paths are files or
    /// both are directories of `.txt` plots paired by name.
    Evaluate {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Directory for `trees.tsv`, `plots.tsv` and `dataset.tsv`.
        #[arg(long, value_name = "DIR")]
        output: Option<PathBuf>,
    },
    /// Tune segmentation parameters on a directory of labelled plots.
    Optimize {
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
        /// Receives `trials.jsonl`, `best_params.cfg` and `importance.tsv`.
        #[arg(long, value_name = "DIR")]
        output: Option<PathBuf>,
        /// Continue the trial log in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Write synthetic labelled plots with known trees.
    Generate {
        #[arg(long, value_name = "DIR")]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        plots: usize,
        #[arg(long, default_value_t = 5)]
        min_trees: usize,
        #[arg(long, default_value_t = 10)]
        max_trees: usize,
    },
    /// Summarise a trial log.
    Report {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.classifier.seed = cfg.seed;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }

    let paths = cfg.paths.clone();
    let pick = |arg: Option<PathBuf>, fallback: Option<PathBuf>, what: &str| {
        arg.or(fallback)
            .ok_or_else(|| CliError::Config(format!("no {what} given (flag or `paths.*` key)")))
    };
    match cli.command {
        Command::Preprocess {
            input,
            output,
            boxes,
        } => commands::preprocess(
            &cfg,
            &pick(input, paths.input, "input")?,
            &pick(output, paths.output, "output")?,
            boxes.as_deref(),
        ),
        Command::Classify { input, output } => commands::classify(
            &cfg,
            &pick(input, paths.input, "input")?,
            &pick(output, paths.output, "output")?,
        ),
        Command::Segment { input, output } => commands::segment(
            &cfg,
            &pick(input, paths.input, "input")?,
            &pick(output, paths.output, "output")?,
        ),
        Command::Evaluate {
            pred,
            truth,
            output,
        } => commands::evaluate(
            &cfg,
            &pick(pred, paths.input, "prediction")?,
            &pick(truth, paths.truth, "ground truth")?,
            output.or(paths.output).as_deref(),
        ),
        Command::Optimize {
            dataset,
            output,
            resume,
        } => commands::optimize(
            &cfg,
            &pick(dataset, paths.dataset, "dataset")?,
            &pick(output, paths.output, "output directory")?,
            resume,
        ),
        Command::Generate {
            output,
            plots,
            min_trees,
            max_trees,
        } => commands::generate(
            &cfg,
            &pick(output, paths.output, "output directory")?,
            plots,
            (min_trees, max_trees),
        ),
        Command::Report { log, format } => {
            commands::report(&cfg, &pick(log, paths.log, "trial log")?, format)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FORESTSEG_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(error::EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("forestseg: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
