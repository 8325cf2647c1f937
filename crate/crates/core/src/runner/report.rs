//! Sweep output files: per-cell CSV, JSON summary, plots and text tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::svg::{chart, Series};
use super::{CellResult, CellSummary, SweepReport};
use crate::error::{Error, Result};
use crate::optim::TrainHistory;

/// Paths written by [`emit_report`] and any warnings raised on the way.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportFiles {
    pub cells_csv: PathBuf,
    pub summary_json: PathBuf,
    pub plots: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// `0` for zero, otherwise a decimal without the leading zero (`.001`).
pub fn format_lambda(lambda: f64) -> String {
    if lambda == 0.0 {
        return "0".into();
    }
    let s = format!("{lambda}");
    match s.strip_prefix("0.") {
        Some(rest) => format!(".{rest}"),
        None => s,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn series_by_group(summary: &[CellSummary], y: impl Fn(&CellSummary) -> f64) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    let mut last = None;
    for s in summary {
        let key = (s.task, s.method);
        if last != Some(key) {
            out.push(Series {
                name: format!("{} {}", s.task, s.method),
                points: Vec::new(),
            });
            last = Some(key);
        }
        out.last_mut()
            .expect("pushed above")
            .points
            .push((s.lambda, y(s)));
    }
    out
}

/// Writes `cells.csv`, `summary.json` and three SVG plots into `dir`.
/// An empty report still produces all files, with a warning.
pub fn emit_report(report: &SweepReport, dir: &Path) -> Result<ReportFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut warnings = Vec::new();

    let cells_csv = dir.join("cells.csv");
    let mut w = csv::Writer::from_path(&cells_csv)?;
    if report.cells.is_empty() {
        w.write_record([
            "task",
            "method",
            "lambda",
            "run",
            "seed",
            "train_acc",
            "val_acc",
            "attacker_advantage",
            "seconds",
        ])?;
    }
    for c in &report.cells {
        w.serialize(c)?;
    }
    w.flush().map_err(|e| Error::io(&cells_csv, e))?;

    let summary = report.summary();
    if summary.is_empty() {
        warnings.push("no cell completed; the summary is empty".to_string());
    }
    if !report.failures.is_empty() {
        warnings.push(format!(
            "{} of {} cells failed",
            report.failures.len(),
            report.cells_expected
        ));
    }
    let correlation = match report.correlation(None) {
        Ok(c) => json!({ "r": c.r, "points": c.points }),
        Err(e) => {
            warnings.push(format!("gap/advantage correlation: {e}"));
            json!({ "error": e.to_string() })
        }
    };
    let summary_json = dir.join("summary.json");
    let doc = json!({
        "cells_expected": report.cells_expected,
        "cells_completed": report.cells.len(),
        "failures": report.failures,
        "summary": summary,
        "correlation": correlation,
    });
    write_file(&summary_json, &(serde_json::to_string_pretty(&doc)? + "\n"))?;

    let val = series_by_group(&summary, |s| s.val_acc.mean);
    let adv = series_by_group(&summary, |s| s.attacker_advantage.mean);
    let gap: Vec<Series> = series_by_group(&summary, |s| s.gap.mean)
        .into_iter()
        .zip(&adv)
        .map(|(g, a)| Series {
            name: g.name,
            points: a
                .points
                .iter()
                .zip(&g.points)
                .map(|(a, g)| (a.1, g.1))
                .collect(),
        })
        .collect();
    let plots = [
        (
            "val_accuracy.svg",
            chart("Validation accuracy", "λ", "accuracy (%)", &val, true),
        ),
        (
            "advantage.svg",
            chart("Attacker advantage", "λ", "advantage (%)", &adv, true),
        ),
        (
            "gap_vs_advantage.svg",
            chart(
                "Generalization gap vs advantage",
                "advantage (%)",
                "train − val (%)",
                &gap,
                false,
            ),
        ),
    ];
    let mut paths = Vec::new();
    for (name, svg) in plots {
        let p = dir.join(name);
        write_file(&p, &svg)?;
        paths.push(p);
    }
    Ok(ReportFiles {
        cells_csv,
        summary_json,
        plots: paths,
        warnings,
    })
}

/// One block per task: a λ header row, then train accuracy, validation
/// accuracy and attacker advantage (mean ± std) for each method.
pub fn format_table(summary: &[CellSummary]) -> String {
    let mut out = String::new();
    let mut tasks: Vec<_> = summary.iter().map(|s| s.task).collect();
    tasks.dedup();
    for task in tasks {
        let rows: Vec<&CellSummary> = summary.iter().filter(|s| s.task == task).collect();
        let mut lambdas: Vec<f64> = rows.iter().map(|s| s.lambda).collect();
        lambdas.sort_by(f64::total_cmp);
        lambdas.dedup();
        let _ = writeln!(out, "{task}");
        let _ = write!(out, "{:<24}", "λ");
        for l in &lambdas {
            let _ = write!(out, "{:>16}", format_lambda(*l));
        }
        out.push('\n');
        let mut methods: Vec<_> = rows.iter().map(|s| s.method).collect();
        methods.dedup();
        for method in methods {
            for (label, pick) in [
                (
                    "Train Acc",
                    (|s: &CellSummary| s.train_acc) as fn(&CellSummary) -> super::Stat,
                ),
                ("Val Acc", |s: &CellSummary| s.val_acc),
                ("AA", |s: &CellSummary| s.attacker_advantage),
            ] {
                let _ = write!(out, "{:<24}", format!("{method} {label}"));
                for l in &lambdas {
                    let cell = rows.iter().find(|s| s.method == method && s.lambda == *l);
                    let text = cell.map_or_else(
                        || "-".to_string(),
                        |s| {
                            let st = pick(s);
                            format!("{:.2}±{:.2}", st.mean, st.std)
                        },
                    );
                    let _ = write!(out, "{text:>16}");
                }
                out.push('\n');
            }
        }
        out.push('\n');
    }
    out
}

/// Reads a `cells.csv` written by [`emit_report`].
pub fn read_cells_csv(path: &Path) -> Result<Vec<CellResult>> {
    if !path.exists() {
        return Err(Error::DataNotFound(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut cells = Vec::new();
    for rec in r.deserialize() {
        cells.push(rec?);
    }
    Ok(cells)
}

/// Writes `epoch,train_loss,train_accuracy,val_accuracy`, one row per epoch.
pub fn write_history_csv(history: &TrainHistory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "train_accuracy", "val_accuracy"])?;
    for e in 0..history.epochs() {
        w.write_record([
            (e + 1).to_string(),
            history.train_loss[e].to_string(),
            history.train_accuracy[e].to_string(),
            history.val_accuracy[e].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
