//! Convergence-curve CSVs and a markdown overview for a finished run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{read_metrics_csv, summarize, MetricsRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub id: String,
    pub checkpoints: usize,
    pub best_error: f64,
    pub median_last_20_error: f64,
    pub final_utilization: f64,
    pub final_thresholds: Vec<f64>,
}

/// Metrics streams under `<dir>/runs`, sorted by run id.
pub fn metrics_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let runs = dir.join("runs");
    let entries = std::fs::read_dir(&runs).map_err(|e| Error::io(&runs, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&runs, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(id) = name.strip_suffix(".csv") {
            if !id.ends_with("_summary") {
                out.push((id.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn curve<F: Fn(&MetricsRecord) -> Vec<f64>>(records: &[MetricsRecord], header: &str, f: F) -> String {
    let mut s = format!("iteration,{header}\n");
    for r in records {
        let cells: Vec<String> = f(r).iter().map(f64::to_string).collect();
        let _ = writeln!(s, "{},{}", r.iteration, cells.join(","));
    }
    s
}

fn numbered(prefix: &str, n: usize) -> String {
    (0..n).map(|c| format!("{prefix}_{c}")).collect::<Vec<_>>().join(",")
}

/// Writes `<dir>/curves/<id>_{loss,error,utilization,class_acc,thresholds}.csv`
/// for every run and `<dir>/report.md`.
pub fn report(dir: &Path) -> Result<Vec<RunReport>> {
    let files = metrics_files(dir)?;
    let curves = dir.join("curves");
    std::fs::create_dir_all(&curves).map_err(|e| Error::io(&curves, e))?;
    let mut reports = Vec::new();
    for (id, path) in &files {
        let records = read_metrics_csv(path)?;
        let Some(last) = records.last() else {
            continue;
        };
        let c = last.thresholds.len();
        let outputs = [
            ("loss", curve(&records, "loss_s,loss_u", |r| vec![r.loss_s, r.loss_u])),
            ("error", curve(&records, "error", |r| vec![r.eval.error])),
            ("utilization", curve(&records, "utilization,pseudo_acc", |r| vec![r.utilization, r.pseudo_acc])),
            ("class_acc", curve(&records, &numbered("acc", c), |r| r.eval.class_accuracy.clone())),
            ("thresholds", curve(&records, &numbered("thr", c), |r| r.thresholds.clone())),
        ];
        for (kind, text) in outputs {
            let p = curves.join(format!("{id}_{kind}.csv"));
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        let s = summarize(&records)?;
        reports.push(RunReport {
            id: id.clone(),
            checkpoints: records.len(),
            best_error: s.best_error,
            median_last_20_error: s.median_last_20_error,
            final_utilization: last.utilization,
            final_thresholds: last.thresholds.clone(),
        });
    }

    let mut md = String::from("# Run report\n\n");
    let table = dir.join("table.md");
    if let Ok(text) = std::fs::read_to_string(&table) {
        md.push_str(&text);
        md.push('\n');
    }
    md.push_str("| Run | Checkpoints | Best error (%) | Median last 20 (%) | Final utilization | Final thresholds |\n");
    md.push_str("|---|---|---|---|---|---|\n");
    for r in &reports {
        let thr: Vec<String> = r.final_thresholds.iter().map(|t| format!("{t:.3}")).collect();
        let _ = writeln!(
            md,
            "| {} | {} | {:.2} | {:.2} | {:.3} | {} |",
            r.id,
            r.checkpoints,
            100.0 * r.best_error,
            100.0 * r.median_last_20_error,
            r.final_utilization,
            thr.join(" ")
        );
    }
    let p = dir.join("report.md");
    std::fs::write(&p, md).map_err(|e| Error::io(&p, e))?;
    Ok(reports)
}
