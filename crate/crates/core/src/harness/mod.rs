//! Experiment plumbing: configuration files, sweeps, ablations and reports.

mod ablate;
mod config;
mod plan;
mod report;

pub use ablate::{ablate, alternate_dataset, AblationKind, AblationRow, AblationTable, TAU_GRID};
pub use config::{print_defaults, DatasetConfig, ExperimentConfig, PlanConfig, Variant};
pub use plan::{execute_job, plan_jobs, run_id, run_jobs, run_plan, CellSummary, Job, PlanResult, RunOutcome};
pub use report::{metrics_files, report, RunReport};
