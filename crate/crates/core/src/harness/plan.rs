//! Sweeps over algorithm × label budget × seed, and the table they produce.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{DatasetConfig, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metrics::{mean_std, Summary};
use crate::trainer::{train, TrainConfig};

/// One training run: fully resolved dataset, budget and training config.
#[derive(Clone, Debug)]
pub struct Job {
    pub id: String,
    pub variant: String,
    pub dataset: DatasetConfig,
    pub labels_per_class: usize,
    pub train: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub job: Job,
    pub result: std::result::Result<Summary, String>,
}

pub fn run_id(variant: &str, labels_per_class: usize, seed: u64) -> String {
    let safe: String = variant
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}_L{labels_per_class}_s{seed}")
}

/// Trains one job and writes `runs/<id>.csv` and `runs/<id>_summary.csv`
/// under `out`.
pub fn execute_job(job: &Job, out: &Path) -> Result<Summary> {
    let pool = job.dataset.pool()?;
    let data = job.dataset.split(&pool, job.labels_per_class, job.train.seed)?;
    let run = train(&job.train, &data)?;
    let summary = run.summary()?;
    let dir = out.join("runs");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    run.save_csv(&dir.join(format!("{}.csv", job.id)))?;
    let outcome = RunOutcome {
        job: job.clone(),
        result: Ok(summary.clone()),
    };
    write_summary_csv(&[outcome], run.class_count, &dir.join(format!("{}_summary.csv", job.id)))?;
    Ok(summary)
}

/// Runs jobs on up to `jobs` worker threads; results keep the input order.
pub fn run_jobs(list: &[Job], jobs: usize, out: &Path) -> Result<Vec<RunOutcome>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        list.par_iter()
            .map(|job| RunOutcome {
                job: job.clone(),
                result: execute_job(job, out).map_err(|e| e.to_string()),
            })
            .collect()
    }))
}

fn write_summary_csv(outcomes: &[RunOutcome], class_count: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = ["run_id", "algorithm", "labels_per_class", "seed", "status"]
        .map(String::from)
        .to_vec();
    header.extend(["best_error", "median_last_20_error"].map(String::from));
    header.extend((0..class_count).map(|c| format!("final_acc_{c}")));
    header.push("message".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for o in outcomes {
        let j = &o.job;
        let mut row = vec![
            j.id.clone(),
            j.variant.clone(),
            j.labels_per_class.to_string(),
            j.train.seed.to_string(),
        ];
        match &o.result {
            Ok(s) => {
                row.push("ok".into());
                row.push(s.best_error.to_string());
                row.push(s.median_last_20_error.to_string());
                row.extend((0..class_count).map(|c| {
                    s.final_class_accuracy.get(c).map_or(String::new(), |v| v.to_string())
                }));
                row.push(String::new());
            }
            Err(msg) => {
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), 2 + class_count));
                row.push(msg.clone());
            }
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Aggregate of one (variant, budget) cell across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub variant: String,
    pub label: String,
    pub labels_per_class: usize,
    pub succeeded: usize,
    pub failed: usize,
    /// Mean and sample std of best error over successful seeds.
    pub best: (f64, f64),
    pub median_last_20: (f64, f64),
}

impl CellSummary {
    fn from_outcomes(variant: &str, label: &str, budget: usize, outs: &[&RunOutcome]) -> Self {
        let ok: Vec<&Summary> = outs.iter().filter_map(|o| o.result.as_ref().ok()).collect();
        let best: Vec<f64> = ok.iter().map(|s| s.best_error).collect();
        let med: Vec<f64> = ok.iter().map(|s| s.median_last_20_error).collect();
        Self {
            variant: variant.to_string(),
            label: label.to_string(),
            labels_per_class: budget,
            succeeded: ok.len(),
            failed: outs.len() - ok.len(),
            best: mean_std(&best),
            median_last_20: mean_std(&med),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.failed > 0
    }

    /// `best ± std (median ± std)` in percent.
    pub fn cell_text(&self) -> String {
        if self.succeeded == 0 {
            return format!("failed ({}/{})", self.failed, self.failed);
        }
        let mut s = format!(
            "{:.2} ± {:.2} ({:.2} ± {:.2})",
            100.0 * self.best.0,
            100.0 * self.best.1,
            100.0 * self.median_last_20.0,
            100.0 * self.median_last_20.1
        );
        if self.failed > 0 {
            let _ = write!(s, " [{} failed]", self.failed);
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct PlanResult {
    pub out: PathBuf,
    pub outcomes: Vec<RunOutcome>,
    pub cells: Vec<CellSummary>,
    pub budgets: Vec<usize>,
}

impl PlanResult {
    pub fn all_succeeded(&self) -> bool {
        self.outcomes.iter().all(|o| o.result.is_ok())
    }

    /// Rows are variants, columns label budgets; entries are error rates in
    /// percent as `best (median of last 20)`, mean ± sample std over seeds.
    pub fn table_markdown(&self) -> String {
        let mut s = String::from("| Algorithm |");
        for b in &self.budgets {
            let _ = write!(s, " {b} labels/class |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(self.budgets.len()));
        s.push('\n');
        let mut variants: Vec<(&str, &str)> = Vec::new();
        for c in &self.cells {
            if !variants.iter().any(|(v, _)| *v == c.variant) {
                variants.push((&c.variant, &c.label));
            }
        }
        for (variant, label) in variants {
            let _ = write!(s, "| {label} |");
            for b in &self.budgets {
                let cell = self
                    .cells
                    .iter()
                    .find(|c| c.variant == variant && c.labels_per_class == *b);
                let _ = write!(s, " {} |", cell.map_or(String::new(), |c| c.cell_text()));
            }
            s.push('\n');
        }
        s
    }
}

fn variant_label(cfg: &ExperimentConfig, name: &str) -> String {
    if cfg.variants.iter().any(|v| v.name == name) {
        name.to_string()
    } else {
        cfg.algorithm(name).map_or(name.to_string(), |s| s.label())
    }
}

pub fn plan_jobs(cfg: &ExperimentConfig) -> Result<Vec<Job>> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for name in &cfg.plan.algorithms {
        let spec = cfg.algorithm(name)?;
        for &budget in &cfg.plan.labels_per_class {
            for &seed in &cfg.plan.seeds {
                let mut train = cfg.train.clone();
                train.spec = spec.clone();
                train.seed = seed;
                let id = run_id(name, budget, seed);
                if jobs.iter().any(|j: &Job| j.id == id) {
                    return Err(Error::Config(format!("duplicate run id '{id}'")));
                }
                jobs.push(Job {
                    id,
                    variant: name.clone(),
                    dataset: cfg.dataset.clone(),
                    labels_per_class: budget,
                    train,
                });
            }
        }
    }
    Ok(jobs)
}

/// Executes the whole plan, then writes `summary.csv` and `table.md` to the
/// output directory. Failed runs mark their cell failed; others continue.
pub fn run_plan(cfg: &ExperimentConfig) -> Result<PlanResult> {
    let jobs = plan_jobs(cfg)?;
    let out = cfg.plan.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let outcomes = run_jobs(&jobs, cfg.plan.jobs, &out)?;

    let mut cells = Vec::new();
    for name in &cfg.plan.algorithms {
        let label = variant_label(cfg, name);
        for &budget in &cfg.plan.labels_per_class {
            let outs: Vec<&RunOutcome> = outcomes
                .iter()
                .filter(|o| o.job.variant == *name && o.job.labels_per_class == budget)
                .collect();
            cells.push(CellSummary::from_outcomes(name, &label, budget, &outs));
        }
    }
    let class_count = class_count_of(&outcomes, &cfg.dataset);
    write_summary_csv(&outcomes, class_count, &out.join("summary.csv"))?;
    let result = PlanResult {
        out: out.clone(),
        outcomes,
        cells,
        budgets: cfg.plan.labels_per_class.clone(),
    };
    let table = format!(
        "# Error rates (%)\n\nDataset: {}. Entries: best error (median of last 20 checkpoints), mean ± sample std over seeds {:?}.\n\n{}",
        cfg.dataset.label(),
        cfg.plan.seeds,
        result.table_markdown()
    );
    let path = out.join("table.md");
    std::fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
    Ok(result)
}

fn class_count_of(outcomes: &[RunOutcome], dataset: &DatasetConfig) -> usize {
    outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().ok())
        .map(|s| s.final_class_accuracy.len())
        .next()
        .unwrap_or(dataset.classes)
}
