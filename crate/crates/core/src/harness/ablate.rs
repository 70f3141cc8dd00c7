//! Single-knob comparisons around the flexible-threshold algorithm.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use super::config::{DatasetConfig, ExperimentConfig};
use super::plan::{run_id, run_jobs, Job, RunOutcome};
use crate::cpl::Mapping;
use crate::datagen::SyntheticKind;
use crate::error::{Error, Result};
use crate::metrics::mean_std;
use crate::sslloss::AlgorithmSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationKind {
    TauSweep,
    Mapping,
    Warmup,
    ClassBalance,
}

impl AblationKind {
    pub const ALL: [AblationKind; 4] = [
        AblationKind::TauSweep,
        AblationKind::Mapping,
        AblationKind::Warmup,
        AblationKind::ClassBalance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::TauSweep => "tau_sweep",
            AblationKind::Mapping => "mapping",
            AblationKind::Warmup => "warmup",
            AblationKind::ClassBalance => "class_balance",
        }
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation '{s}' (tau_sweep, mapping, warmup, class_balance)")))
    }
}

pub const TAU_GRID: [f64; 5] = [0.85, 0.9, 0.95, 0.97, 1.0];

/// Second dataset of the warm-up comparison.
pub fn alternate_dataset(base: &DatasetConfig) -> DatasetConfig {
    DatasetConfig {
        kind: SyntheticKind::Blobs,
        classes: 4,
        noise: 1.0,
        csv: None,
        ..base.clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub setting: String,
    pub dataset: String,
    pub succeeded: usize,
    pub failed: usize,
    pub best: (f64, f64),
    pub median_last_20: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct AblationTable {
    pub kind: AblationKind,
    pub rows: Vec<AblationRow>,
    pub outcomes: Vec<RunOutcome>,
}

impl AblationTable {
    pub fn all_succeeded(&self) -> bool {
        self.outcomes.iter().all(|o| o.result.is_ok())
    }

    pub fn markdown(&self) -> String {
        let mut s = format!(
            "# Ablation: {}\n\n| Setting | Dataset | Best error (%) | Median last 20 (%) | Runs |\n|---|---|---|---|---|\n",
            self.kind
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {:.2} ± {:.2} | {:.2} ± {:.2} | {}/{} |",
                r.setting,
                r.dataset,
                100.0 * r.best.0,
                100.0 * r.best.1,
                100.0 * r.median_last_20.0,
                100.0 * r.median_last_20.1,
                r.succeeded,
                r.succeeded + r.failed
            );
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("setting,dataset,best_mean,best_std,median_mean,median_std,succeeded,failed\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},\"{}\",{},{},{},{},{},{}",
                r.setting, r.dataset, r.best.0, r.best.1, r.median_last_20.0, r.median_last_20.1, r.succeeded, r.failed
            );
        }
        s
    }
}

struct Setting {
    name: String,
    dataset: DatasetConfig,
    spec: AlgorithmSpec,
    mapping: Mapping,
    warmup: bool,
}

fn settings(kind: AblationKind, base: &ExperimentConfig) -> Vec<Setting> {
    let flex = AlgorithmSpec::fixmatch().flex();
    let plain = |name: String, spec: AlgorithmSpec| Setting {
        name,
        dataset: base.dataset.clone(),
        spec,
        mapping: base.train.mapping,
        warmup: base.train.warmup,
    };
    match kind {
        AblationKind::TauSweep => TAU_GRID
            .iter()
            .map(|&tau| plain(format!("tau={tau}"), AlgorithmSpec { tau, ..flex.clone() }))
            .collect(),
        AblationKind::Mapping => Mapping::ALL
            .iter()
            .map(|&m| Setting {
                mapping: m,
                ..plain(m.name().to_string(), flex.clone())
            })
            .collect(),
        AblationKind::Warmup => {
            let mut out = Vec::new();
            for dataset in [base.dataset.clone(), alternate_dataset(&base.dataset)] {
                for warmup in [true, false] {
                    out.push(Setting {
                        name: format!("warmup={}", if warmup { "on" } else { "off" }),
                        dataset: dataset.clone(),
                        spec: flex.clone(),
                        mapping: base.train.mapping,
                        warmup,
                    });
                }
            }
            out
        }
        AblationKind::ClassBalance => vec![
            plain("FixMatch".into(), AlgorithmSpec::fixmatch()),
            plain(
                "FixMatch+L_b".into(),
                AlgorithmSpec {
                    class_balance_weight: 1.0,
                    ..AlgorithmSpec::fixmatch()
                },
            ),
            plain("FlexMatch".into(), flex),
        ],
    }
}

/// Runs the matched sub-plan for one knob at the first label budget of the
/// base plan and writes `ablation_<kind>.{md,csv}` plus per-run CSVs under
/// `<out>/ablation_<kind>/`.
pub fn ablate(kind: AblationKind, base: &ExperimentConfig) -> Result<AblationTable> {
    let budget = *base
        .plan
        .labels_per_class
        .first()
        .ok_or_else(|| Error::Config("plan has no label budget".into()))?;
    if base.plan.seeds.is_empty() {
        return Err(Error::Config("plan has no seeds".into()));
    }
    let list = settings(kind, base);
    let mut jobs = Vec::new();
    for (i, s) in list.iter().enumerate() {
        for &seed in &base.plan.seeds {
            let mut train = base.train.clone();
            train.spec = s.spec.clone();
            train.mapping = s.mapping;
            train.warmup = s.warmup;
            train.seed = seed;
            train.validate()?;
            jobs.push(Job {
                id: run_id(&format!("{i}_{}", s.name.replace(['=', '+'], "-")), budget, seed),
                variant: s.name.clone(),
                dataset: s.dataset.clone(),
                labels_per_class: budget,
                train,
            });
        }
    }
    let dir = base.plan.out.join(format!("ablation_{kind}"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let outcomes = run_jobs(&jobs, base.plan.jobs, &dir)?;

    let per = base.plan.seeds.len();
    let rows = list
        .iter()
        .zip(outcomes.chunks(per))
        .map(|(s, outs)| {
            let ok: Vec<_> = outs.iter().filter_map(|o| o.result.as_ref().ok()).collect();
            let best: Vec<f64> = ok.iter().map(|r| r.best_error).collect();
            let med: Vec<f64> = ok.iter().map(|r| r.median_last_20_error).collect();
            AblationRow {
                setting: s.name.clone(),
                dataset: s.dataset.label(),
                succeeded: ok.len(),
                failed: outs.len() - ok.len(),
                best: mean_std(&best),
                median_last_20: mean_std(&med),
            }
        })
        .collect();
    let table = AblationTable { kind, rows, outcomes };
    for (ext, text) in [("md", table.markdown()), ("csv", table.csv())] {
        let path = base.plan.out.join(format!("ablation_{kind}.{ext}"));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(table)
}
