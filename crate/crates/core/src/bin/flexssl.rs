use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flexssl::datagen::SyntheticKind;
use flexssl::harness::{self, AblationKind, ExperimentConfig, Job};
use flexssl::Result;

/// Semi-supervised training with curriculum (flexible) pseudo-label thresholds.
#[derive(Parser)]
#[command(name = "flexssl", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags override values from the config file, which override defaults.
#[derive(Args)]
struct Common {
    /// Experiment config file (see `print-defaults`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed (replaces the plan's seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (or file, for gen-data).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Algorithm preset or `[algorithm.NAME]` variant.
    #[arg(long, global = true)]
    algorithm: Option<String>,
    #[arg(long, global = true)]
    labels_per_class: Option<usize>,
    /// Training iterations K.
    #[arg(long, global = true)]
    iterations: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled pool as CSV (stdout unless --out).
    GenData {
        #[arg(long)]
        kind: Option<SyntheticKind>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train a single run and write its metrics CSV.
    Train,
    /// Run the algorithm × label budget × seed sweep.
    Plan,
    /// Run one ablation: tau_sweep, mapping, warmup or class_balance.
    Ablate { kind: AblationKind },
    /// Emit convergence-curve CSVs and report.md for a results directory.
    Report { dir: Option<PathBuf> },
    /// Print the default configuration file.
    PrintDefaults,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.plan.seeds = vec![s];
        }
        if let Some(j) = self.jobs {
            cfg.plan.jobs = j;
        }
        if let Some(o) = &self.out {
            cfg.plan.out = o.clone();
        }
        if let Some(a) = &self.algorithm {
            cfg.plan.algorithms = vec![a.clone()];
        }
        if let Some(l) = self.labels_per_class {
            cfg.plan.labels_per_class = vec![l];
        }
        if let Some(k) = self.iterations {
            cfg.train.iterations = k;
            cfg.train.checkpoint_every = cfg.train.checkpoint_every.min(k);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::PrintDefaults => {
            print!("{}", harness::print_defaults());
            Ok(true)
        }
        Command::GenData {
            kind,
            samples,
            classes,
            noise,
        } => {
            let mut cfg = match &cli.common.config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            let d = &mut cfg.dataset;
            d.csv = None;
            d.kind = kind.unwrap_or(d.kind);
            d.n_total = samples.unwrap_or(d.n_total);
            d.classes = classes.unwrap_or(d.classes);
            d.noise = noise.unwrap_or(d.noise);
            d.seed = cli.common.seed.unwrap_or(d.seed);
            let pool = d.pool()?;
            match &cli.common.out {
                Some(path) => pool.save_csv(path)?,
                None => pool
                    .write_csv(std::io::stdout().lock())
                    .map_err(|e| flexssl::Error::io("<stdout>", e))?,
            }
            Ok(true)
        }
        Command::Train => {
            let cfg = cli.common.load()?;
            let name = cfg.plan.algorithms[0].clone();
            let (budget, seed) = (cfg.plan.labels_per_class[0], cfg.plan.seeds[0]);
            let mut train = cfg.train.clone();
            train.spec = cfg.algorithm(&name)?;
            train.seed = seed;
            let job = Job {
                id: harness::run_id(&name, budget, seed),
                variant: name,
                dataset: cfg.dataset.clone(),
                labels_per_class: budget,
                train,
            };
            let s = harness::execute_job(&job, &cfg.plan.out)?;
            println!(
                "{}: best error {:.2}%, median of last 20 {:.2}%, final class accuracy {:?}",
                job.id,
                100.0 * s.best_error,
                100.0 * s.median_last_20_error,
                s.final_class_accuracy
            );
            println!("metrics: {}", cfg.plan.out.join("runs").join(format!("{}.csv", job.id)).display());
            Ok(true)
        }
        Command::Plan => {
            let cfg = cli.common.load()?;
            let result = harness::run_plan(&cfg)?;
            print!("{}", result.table_markdown());
            for o in &result.outcomes {
                if let Err(e) = &o.result {
                    eprintln!("run {} failed: {e}", o.job.id);
                }
            }
            println!("results written to {}", result.out.display());
            Ok(result.all_succeeded())
        }
        Command::Ablate { kind } => {
            let cfg = cli.common.load()?;
            let table = harness::ablate(kind, &cfg)?;
            print!("{}", table.markdown());
            for o in &table.outcomes {
                if let Err(e) = &o.result {
                    eprintln!("run {} failed: {e}", o.job.id);
                }
            }
            Ok(table.all_succeeded())
        }
        Command::Report { dir } => {
            let dir = dir
                .or(cli.common.out.clone())
                .unwrap_or_else(|| ExperimentConfig::default().plan.out);
            let reports = harness::report(&dir)?;
            println!("{} runs reported in {}", reports.len(), dir.join("report.md").display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
