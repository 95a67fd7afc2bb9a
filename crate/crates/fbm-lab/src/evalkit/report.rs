//! Table and plot rendering from completed evaluation runs.
//!
//! Reads `eval_rows.csv` from a run directory and writes a per-task table
//! (scores at the best checkpoint, mean plus/minus standard deviation across
//! seeds) and a standalone SVG bar chart of all-task IQMs with bootstrap
//! whiskers. Rendering is pure: no display dependency, deterministic output.

use std::path::{Path, PathBuf};

use super::{stats, EvalReport};
use crate::error::{FbmError, Result};
use crate::rng::Rng;

#[derive(Debug)]
pub struct RenderedReport {
    pub table_path: PathBuf,
    pub plot_path: PathBuf,
}

/// Renders tables and plots for a completed run directory.
pub fn render_report(run_dir: &Path, out_dir: &Path) -> Result<RenderedReport> {
    let rows_path = run_dir.join("eval_rows.csv");
    if !rows_path.exists() {
        return Err(FbmError::contract(format!(
            "run directory {} is missing expected files: eval_rows.csv",
            run_dir.display()
        )));
    }
    let report = EvalReport::read_csv(&rows_path)?;
    if report.rows.is_empty() {
        return Err(FbmError::contract("eval_rows.csv contains no rows"));
    }
    std::fs::create_dir_all(out_dir)?;

    // arm = (variant, routing); tasks and seeds discovered from the rows
    let mut arms: Vec<(String, String)> = report
        .rows
        .iter()
        .map(|r| (r.variant.clone(), r.routing.clone()))
        .collect();
    arms.sort();
    arms.dedup();

    let mut tasks: Vec<String> = report.rows.iter().map(|r| r.task.clone()).collect();
    tasks.sort();
    tasks.dedup();

    // per-task table at each arm's best checkpoint
    let mut table = String::from("variant,routing,task,mean,std,seeds\n");
    for (variant, routing) in &arms {
        let best = report.best_checkpoint(variant, routing, None)?;
        for task in &tasks {
            let scores: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| {
                    &r.variant == variant
                        && &r.routing == routing
                        && &r.task == task
                        && r.checkpoint_step == best
                })
                .map(|r| r.iqm)
                .collect();
            if scores.is_empty() {
                continue;
            }
            let n = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / n;
            let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
            table.push_str(&format!(
                "{variant},{routing},{task},{mean:.6},{:.6},{}\n",
                var.sqrt(),
                scores.len()
            ));
        }
    }
    let table_path = out_dir.join("task_table.csv");
    std::fs::write(&table_path, table)?;

    // all-task IQM bars with bootstrap whiskers, normalized against the
    // fully observed FB arm when present
    let mut ci_rng = Rng::stream(7, "report_ci");
    let mut bars: Vec<(String, f64, f64, f64)> = Vec::new();
    for (variant, routing) in &arms {
        let best = report.best_checkpoint(variant, routing, None)?;
        let (point, lo, hi) =
            report.all_task_iqm_ci(variant, routing, None, best, 1000, 0.95, &mut ci_rng)?;
        bars.push((format!("{variant}/{routing}"), point, lo, hi));
    }
    let baseline = bars
        .iter()
        .find(|(label, _, _, _)| label == "fb/none")
        .map(|(_, p, _, _)| *p);
    let plot_path = out_dir.join("summary.svg");
    std::fs::write(&plot_path, render_bar_svg(&bars, baseline))?;

    Ok(RenderedReport {
        table_path,
        plot_path,
    })
}

/// A standalone SVG bar chart: one bar per arm with CI whiskers; when a
/// reference score is given a dotted line marks it and a normalized column is
/// printed in the labels.
pub fn render_bar_svg(bars: &[(String, f64, f64, f64)], baseline: Option<f64>) -> String {
    let width = 120 + bars.len() * 90;
    let height = 340;
    let top = 30.0;
    let bottom = 280.0;
    let max_val = bars
        .iter()
        .map(|(_, _, _, hi)| *hi)
        .fold(1e-9_f64, f64::max);
    let scale = (bottom - top) / max_val;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n\
         <line x1=\"50\" y1=\"{bottom}\" x2=\"{}\" y2=\"{bottom}\" stroke=\"black\"/>\n",
        width - 20
    );
    for (i, (label, point, lo, hi)) in bars.iter().enumerate() {
        let x = 70.0 + i as f64 * 90.0;
        let bar_h = point * scale;
        let y = bottom - bar_h;
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y:.2}\" width=\"40\" height=\"{bar_h:.2}\" fill=\"#4878a8\"/>\n"
        ));
        let cx = x + 20.0;
        let y_lo = bottom - lo * scale;
        let y_hi = bottom - hi * scale;
        svg.push_str(&format!(
            "<line x1=\"{cx}\" y1=\"{y_lo:.2}\" x2=\"{cx}\" y2=\"{y_hi:.2}\" stroke=\"black\" stroke-width=\"2\"/>\n"
        ));
        let norm = baseline
            .filter(|b| b.abs() > 1e-12)
            .map(|b| format!(" ({:.2}x)", point / b))
            .unwrap_or_default();
        svg.push_str(&format!(
            "<text x=\"{cx}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{label}{norm}</text>\n",
            bottom + 18.0
        ));
        svg.push_str(&format!(
            "<text x=\"{cx}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{point:.1}</text>\n",
            y - 6.0
        ));
    }
    if let Some(b) = baseline {
        let y = bottom - b * scale;
        svg.push_str(&format!(
            "<line x1=\"50\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n",
            width - 20
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Rows of the per-task table, parsed back for tests and tooling.
pub fn summarize_tasks(report: &EvalReport, variant: &str, routing: &str) -> Result<Vec<(String, f64, f64)>> {
    let best = report.best_checkpoint(variant, routing, None)?;
    let mut tasks: Vec<String> = report
        .rows
        .iter()
        .filter(|r| r.variant == variant && r.routing == routing)
        .map(|r| r.task.clone())
        .collect();
    tasks.sort();
    tasks.dedup();
    let mut out = Vec::new();
    for task in tasks {
        let scores: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| {
                r.variant == variant
                    && r.routing == routing
                    && r.task == task
                    && r.checkpoint_step == best
            })
            .map(|r| r.iqm)
            .collect();
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        out.push((task, mean, var.sqrt()));
    }
    Ok(out)
}

/// Convenience check used by suites: IQM of a set of rows (any grouping).
pub fn pooled_iqm(scores: &[f64]) -> Result<f64> {
    stats::iqm(scores)
}
