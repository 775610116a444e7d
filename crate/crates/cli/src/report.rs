//! Tabular output for evaluations and trial logs.
//!
//! Text tables are aligned for reading; TSV has a header row and uses `-`
//! for missing values.

use std::fmt::Write as _;

use forestseg::evaluate::EvaluationReport;
use forestseg::optimize::{best_so_far, ImportanceReport, TrialRecord};

use crate::Format;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}

fn row(out: &mut String, cells: &[String], widths: &[usize], format: Format) {
    match format {
        Format::Tsv => out.push_str(&cells.join("\t")),
        Format::Text => {
            let line: Vec<String> = cells
                .iter()
                .zip(widths)
                .map(|(c, &w)| format!("{c:>w$}"))
                .collect();
            out.push_str(line.join("  ").trim_end());
        }
    }
    out.push('\n');
}

/// Lays out a header and rows, right-aligned in text mode.
fn table(header: &[&str], rows: &[Vec<String>], format: Format) -> String {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    row(&mut out, &header, &widths, format);
    for r in rows {
        row(&mut out, r, &widths, format);
    }
    out
}

pub fn evaluation_text(report: &EvaluationReport) -> String {
    let d = &report.dataset;
    let mut out = String::new();
    let _ = writeln!(out, "plots           {}", d.plots);
    let _ = writeln!(out, "trees           {}", d.trees);
    let _ = writeln!(out, "precision       {:.6}", d.precision);
    let _ = writeln!(out, "recall          {:.6}", d.recall);
    let _ = writeln!(out, "f1              {:.6}", d.f1);
    let _ = writeln!(out, "iou             {:.6}", d.iou);
    let _ = writeln!(out, "mean residual   {}", opt(d.mean_residual));
    let _ = writeln!(out, "rmse            {}", opt(d.rmse));
    let _ = writeln!(out, "detection       {}", opt(d.detection));
    let _ = writeln!(out, "commission      {}", opt(d.commission));
    let _ = writeln!(out, "omission        {}", opt(d.omission));
    if report.plot_summaries.len() > 1 {
        out.push('\n');
        out.push_str(&plot_rows(report, Format::Text));
    }
    out
}

pub fn trees_tsv(report: &EvaluationReport) -> String {
    let rows: Vec<Vec<String>> = report
        .plots
        .iter()
        .flat_map(|p| {
            p.matching.records.iter().map(move |r| {
                vec![
                    p.name.clone(),
                    r.gt_id.to_string(),
                    r.pred_id.map_or_else(|| "-".into(), |id| id.to_string()),
                    r.overlap.to_string(),
                    r.gt_size.to_string(),
                    r.pred_size.to_string(),
                    format!("{:.6}", r.precision),
                    format!("{:.6}", r.recall),
                    format!("{:.6}", r.f1),
                    format!("{:.6}", r.iou),
                    format!("{:.6}", r.gt_height),
                    opt(r.pred_height),
                    opt(r.residual),
                ]
            })
        })
        .collect();
    table(
        &[
            "plot",
            "gt_id",
            "pred_id",
            "overlap",
            "gt_size",
            "pred_size",
            "precision",
            "recall",
            "f1",
            "iou",
            "gt_height",
            "pred_height",
            "residual",
        ],
        &rows,
        Format::Tsv,
    )
}

fn plot_rows(report: &EvaluationReport, format: Format) -> String {
    let rows: Vec<Vec<String>> = report
        .plot_summaries
        .iter()
        .map(|s| {
            let rate =
                |f: fn(&forestseg::evaluate::DetectionRates) -> f64| opt(s.rates.as_ref().map(f));
            vec![
                s.name.clone(),
                s.trees.to_string(),
                format!("{:.6}", s.precision),
                format!("{:.6}", s.recall),
                format!("{:.6}", s.f1),
                format!("{:.6}", s.iou),
                opt(s.mean_residual),
                opt(s.rmse),
                rate(|r| r.detection),
                rate(|r| r.commission),
                rate(|r| r.omission),
            ]
        })
        .collect();
    table(
        &[
            "plot",
            "trees",
            "precision",
            "recall",
            "f1",
            "iou",
            "mean_residual",
            "rmse",
            "detection",
            "commission",
            "omission",
        ],
        &rows,
        format,
    )
}

pub fn plots_tsv(report: &EvaluationReport) -> String {
    plot_rows(report, Format::Tsv)
}

pub fn dataset_tsv(report: &EvaluationReport) -> String {
    let d = &report.dataset;
    let rows = vec![vec![
        d.plots.to_string(),
        d.trees.to_string(),
        format!("{:.6}", d.precision),
        format!("{:.6}", d.recall),
        format!("{:.6}", d.f1),
        format!("{:.6}", d.iou),
        opt(d.mean_residual),
        opt(d.rmse),
        opt(d.detection),
        opt(d.commission),
        opt(d.omission),
    ]];
    table(
        &[
            "plots",
            "trees",
            "precision",
            "recall",
            "f1",
            "iou",
            "mean_residual",
            "rmse",
            "detection",
            "commission",
            "omission",
        ],
        &rows,
        Format::Tsv,
    )
}

/// One row per trial with the objective, the running best and the
/// parameter values. Failed trials show `failed` as objective.
pub fn iteration_table(history: &[TrialRecord], names: &[String], format: Format) -> String {
    let best = best_so_far(history);
    let rows: Vec<Vec<String>> = history
        .iter()
        .zip(&best)
        .map(|(r, b)| {
            let mut cells = vec![
                r.trial.to_string(),
                r.stage.to_string(),
                r.objective
                    .map_or_else(|| "failed".into(), |v| format!("{v:.6}")),
                opt(*b),
            ];
            cells.extend(r.params.iter().map(|v| format!("{v:.6}")));
            cells
        })
        .collect();
    let mut header = vec!["trial", "stage", "f1", "best_so_far"];
    header.extend(names.iter().map(String::as_str));
    table(&header, &rows, format)
}

/// Failed trials with the stage that broke; empty when none failed.
pub fn failure_list(history: &[TrialRecord], format: Format) -> String {
    let rows: Vec<Vec<String>> = history
        .iter()
        .filter_map(|r| {
            r.failure
                .as_ref()
                .map(|f| vec![r.trial.to_string(), f.stage.clone(), f.message.clone()])
        })
        .collect();
    if rows.is_empty() {
        return String::new();
    }
    match format {
        Format::Tsv => table(&["trial", "stage", "message"], &rows, format),
        Format::Text => {
            let mut out = format!("{} failed trials\n", rows.len());
            for r in rows {
                let _ = writeln!(out, "  trial {} failed at {}: {}", r[0], r[1], r[2]);
            }
            out
        }
    }
}

/// Parameters by decreasing importance.
pub fn importance_table(report: &ImportanceReport, format: Format) -> String {
    let rows: Vec<Vec<String>> = report
        .ranking()
        .into_iter()
        .enumerate()
        .map(|(rank, i)| {
            let e = &report.entries[i];
            vec![
                (rank + 1).to_string(),
                e.name.clone(),
                format!("{:.6}", e.importance),
                format!("{:.6}", e.correlation),
                format!("{:.6}", e.length_scale),
            ]
        })
        .collect();
    table(
        &[
            "rank",
            "parameter",
            "importance",
            "correlation",
            "length_scale",
        ],
        &rows,
        format,
    )
}
