use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use forestseg::evaluate::evaluate_dataset;
use forestseg::instance::segment_instances;
use forestseg::io::{read_cloud, write_cloud};
use forestseg::optimize::{
    importance_analysis, read_trial_log, two_stage_resume, SegmentationObjective, TrialLog,
};
use forestseg::preprocess::{filter_low_density_tiles, sample_boxes, tile_cloud, voxel_downsample};
use forestseg::semantic;
use forestseg::synthetic::{generate_dataset, ForestConfig};
use forestseg::LabeledCloud;
use log::{info, warn};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::report;
use crate::Format;

/// Plot files inside a dataset directory.
pub const PLOT_EXTENSION: &str = "txt";

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

/// `(name, path)` of every plot file in `dir`, sorted by name.
pub fn plot_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("cannot list {}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| CliError::Data(format!("cannot list {}: {e}", dir.display())))?
            .path();
        if path.is_file() && path.extension().is_some_and(|x| x == PLOT_EXTENSION) {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            out.push((name, path));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::Data(format!(
            "no .{PLOT_EXTENSION} plot files in {}",
            dir.display()
        )));
    }
    Ok(out)
}

pub fn preprocess(
    cfg: &PipelineConfig,
    input: &Path,
    output: &Path,
    boxes: Option<&Path>,
) -> Result<(), CliError> {
    let p = &cfg.preprocess;
    let cloud = read_cloud(input)?;
    let tiles = tile_cloud(&cloud, p.tile_size)?;
    let kept = filter_low_density_tiles(&cloud, &tiles, p.min_tile_density);
    let dropped = tiles
        .iter()
        .filter(|t| t.density < p.min_tile_density)
        .count();
    if kept.is_empty() {
        return Err(CliError::Pipeline(format!(
            "preprocess: empty output, all {} tiles are below min_tile_density {}",
            tiles.len(),
            p.min_tile_density
        )));
    }
    let out = if p.subsample {
        voxel_downsample(&kept, p.subsampling_min_spacing, cfg.seed)?
    } else {
        kept.clone()
    };
    write_cloud(output, &out)?;
    println!("points in       {}", cloud.len());
    println!("tiles           {}", tiles.len());
    println!("tiles dropped   {dropped}");
    println!("points kept     {}", kept.len());
    println!("points out      {}", out.len());

    if let Some(dir) = boxes {
        create_dir(dir)?;
        let cut = sample_boxes(&out, p, cfg.seed)?;
        let mut index = String::from(
            "file\tpoints\toffset_x\toffset_y\toffset_z\textent_x\textent_y\textent_z\n",
        );
        for (k, b) in cut.iter().enumerate() {
            let file = format!("box_{k:04}.{PLOT_EXTENSION}");
            write_cloud(&dir.join(&file), &b.cloud)?;
            let _ = writeln!(
                index,
                "{file}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                b.cloud.len(),
                b.offset.x,
                b.offset.y,
                b.offset.z,
                b.extent[0],
                b.extent[1],
                b.extent[2]
            );
        }
        write_text(&dir.join("boxes.tsv"), &index)?;
        println!("sample boxes    {}", cut.len());
    }
    Ok(())
}

pub fn generate(
    cfg: &PipelineConfig,
    output: &Path,
    plots: usize,
    trees: (usize, usize),
) -> Result<(), CliError> {
    if plots == 0 {
        return Err(CliError::Config("--plots must be at least 1".into()));
    }
    let dataset = generate_dataset(&ForestConfig::default(), trees, plots, cfg.seed)?;
    create_dir(output)?;
    for (name, forest) in &dataset {
        write_cloud(
            &output.join(format!("{name}.{PLOT_EXTENSION}")),
            &forest.cloud,
        )?;
        println!(
            "{name}  {} trees  {} points",
            forest.trees.len(),
            forest.cloud.len()
        );
    }
    Ok(())
}

pub fn classify_cloud(
    cfg: &PipelineConfig,
    cloud: &LabeledCloud,
) -> Result<LabeledCloud, CliError> {
    Ok(semantic::classify(cloud, &cfg.classifier)?)
}

pub fn classify(cfg: &PipelineConfig, input: &Path, output: &Path) -> Result<(), CliError> {
    let cloud = read_cloud(input)?;
    let labelled = classify_cloud(cfg, &cloud)?;
    write_cloud(output, &labelled)?;
    println!("points classified {}", labelled.len());
    Ok(())
}

pub fn segment(cfg: &PipelineConfig, input: &Path, output: &Path) -> Result<(), CliError> {
    let cloud = read_cloud(input)?;
    let labelled = classify_cloud(cfg, &cloud)?;
    let mut seg = segment_instances(&labelled, &cfg.segmentation)?;
    seg.heights = None;
    write_cloud(output, &seg)?;
    let unassigned = seg
        .instance
        .as_ref()
        .map_or(0, |v| v.iter().filter(|i| i.is_none()).count());
    println!("trees           {}", seg.instance_ids().len());
    println!("points          {}", seg.len());
    println!("unassigned      {unassigned}");
    Ok(())
}

/// Pairs prediction and ground-truth plots, by file name for directories.
fn evaluation_pairs(
    pred: &Path,
    truth: &Path,
) -> Result<Vec<(String, LabeledCloud, LabeledCloud)>, CliError> {
    match (pred.is_dir(), truth.is_dir()) {
        (false, false) => {
            let name = truth
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "plot".into());
            Ok(vec![(name, read_cloud(pred)?, read_cloud(truth)?)])
        }
        (true, true) => {
            let truths = plot_files(truth)?;
            let preds = plot_files(pred)?;
            for (name, _) in &preds {
                if !truths.iter().any(|(n, _)| n == name) {
                    warn!("prediction {name} has no ground truth; ignored");
                }
            }
            truths
                .into_iter()
                .map(|(name, gt_path)| {
                    let Some((_, pred_path)) = preds.iter().find(|(n, _)| *n == name) else {
                        return Err(CliError::Data(format!(
                            "no prediction for plot {name} in {}",
                            pred.display()
                        )));
                    };
                    Ok((name, read_cloud(pred_path)?, read_cloud(&gt_path)?))
                })
                .collect()
        }
        _ => Err(CliError::Data(
            "prediction and ground truth must both be files or both directories".into(),
        )),
    }
}

pub fn evaluate(
    cfg: &PipelineConfig,
    pred: &Path,
    truth: &Path,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let pairs = evaluation_pairs(pred, truth)?;
    for (name, _, gt) in &pairs {
        if gt.instance.is_none() {
            return Err(CliError::Data(format!(
                "ground truth {name} has no inst column"
            )));
        }
    }
    let result = evaluate_dataset(&pairs, &cfg.evaluation, true)?;
    print!("{}", report::evaluation_text(&result));
    if let Some(dir) = output {
        create_dir(dir)?;
        write_text(&dir.join("trees.tsv"), &report::trees_tsv(&result))?;
        write_text(&dir.join("plots.tsv"), &report::plots_tsv(&result))?;
        write_text(&dir.join("dataset.tsv"), &report::dataset_tsv(&result))?;
    }
    Ok(())
}

pub const TRIAL_LOG: &str = "trials.jsonl";
pub const BEST_PARAMS: &str = "best_params.cfg";
pub const IMPORTANCE: &str = "importance.tsv";

pub fn optimize(
    cfg: &PipelineConfig,
    dataset: &Path,
    output: &Path,
    resume: bool,
) -> Result<(), CliError> {
    let o = &cfg.optimize;
    let plots = plot_files(dataset)?
        .into_iter()
        .map(|(name, path)| Ok((name, read_cloud(&path)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    info!("loaded {} plots from {}", plots.len(), dataset.display());
    let mut objective = SegmentationObjective::new(
        o.space.clone(),
        cfg.segmentation,
        plots,
        &cfg.classifier,
        cfg.evaluation,
    )?;

    create_dir(output)?;
    let log_path = output.join(TRIAL_LOG);
    let (mut log, history) = if resume {
        TrialLog::resume(&log_path)?
    } else {
        (TrialLog::create(&log_path)?, Vec::new())
    };
    if !history.is_empty() {
        println!("resuming at trial {}", history.len());
    }
    let result = two_stage_resume(
        &mut objective,
        &o.space,
        o.budget,
        o.budget2,
        cfg.seed,
        &o.optimizer,
        history,
        |r| log.append(r),
    )?;

    let best = &result.best;
    let params = o.space.apply(&best.params, &cfg.segmentation)?;
    let f1 = best.objective.expect("best trial succeeded");
    let text = format!(
        "# best of {} trials: trial {}, dataset F1 {f1:.6}\n{}",
        result.history.len(),
        best.trial,
        PipelineConfig::segmentation_lines(&params)
    );
    write_text(&output.join(BEST_PARAMS), &text)?;
    match &result.importance {
        Some(imp) => write_text(
            &output.join(IMPORTANCE),
            &report::importance_table(imp, Format::Tsv),
        )?,
        None => warn!("too few successful trials for an importance report"),
    }

    let failed = result.history.iter().filter(|r| !r.succeeded()).count();
    println!("trials          {}", result.history.len());
    println!("failed          {failed}");
    println!("best trial      {}", best.trial);
    println!("best F1         {f1:.6}");
    if !result.selected.is_empty() {
        let names = o.space.names();
        let freed: Vec<&str> = result.selected.iter().map(|&i| names[i]).collect();
        println!("second stage    {}", freed.join(" "));
    }
    print!("{}", PipelineConfig::segmentation_lines(&params));
    Ok(())
}

pub fn report(cfg: &PipelineConfig, log: &Path, format: Format) -> Result<(), CliError> {
    let history = read_trial_log(log)?;
    if history.is_empty() {
        return Err(CliError::Data(format!(
            "trial log {} is empty, nothing to report",
            log.display()
        )));
    }
    let space = &cfg.optimize.space;
    let dim = history[0].params.len();
    let names: Vec<String> = if dim == space.dim() {
        space.names().into_iter().map(String::from).collect()
    } else {
        warn!(
            "log has {dim} parameters but the configured space has {}; using positional names",
            space.dim()
        );
        (0..dim).map(|k| format!("p{k}")).collect()
    };
    print!("{}", report::iteration_table(&history, &names, format));
    let failures = report::failure_list(&history, format);
    if !failures.is_empty() {
        println!();
        print!("{failures}");
    }
    if dim == space.dim() {
        let stage1: Vec<_> = history.iter().filter(|r| r.stage == 1).cloned().collect();
        match importance_analysis(space, &stage1, cfg.seed) {
            Ok(imp) => {
                println!();
                print!("{}", report::importance_table(&imp, format));
            }
            Err(e) => warn!("no importance table: {e}"),
        }
    }
    Ok(())
}
