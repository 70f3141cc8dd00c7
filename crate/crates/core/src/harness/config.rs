//! Sectioned `key = value` experiment configuration.
//!
//! ```text
//! [dataset]
//! kind = two_moons
//! [train]
//! iterations = 20000
//! [algorithm.fm_low_tau]
//! base = flexmatch
//! tau = 0.9
//! [plan]
//! algorithms = fixmatch, fm_low_tau
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cpl::Mapping;
use crate::datagen::{self, LabeledPool, SplitDataset, SplitOptions, SyntheticKind};
use crate::error::{Error, Result};
use crate::sslloss::{AlgorithmSpec, Family};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub kind: SyntheticKind,
    pub n_total: usize,
    pub classes: usize,
    pub noise: f64,
    /// Seed of the generated pool; the split uses the run seed.
    pub seed: u64,
    pub eval_fraction: f64,
    pub imbalance_ratio: f64,
    /// Load the pool from a CSV instead of generating it.
    pub csv: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::TwoMoons,
            n_total: 2510,
            classes: 2,
            noise: 0.1,
            seed: 7,
            eval_fraction: 0.2,
            imbalance_ratio: 1.0,
            csv: None,
        }
    }
}

impl DatasetConfig {
    pub fn pool(&self) -> Result<LabeledPool> {
        match &self.csv {
            Some(path) => datagen::load_csv(path),
            None => datagen::make_synthetic(self.kind, self.n_total, self.classes, self.noise, self.seed),
        }
    }

    pub fn split(&self, pool: &LabeledPool, labels_per_class: usize, seed: u64) -> Result<SplitDataset> {
        let opts = SplitOptions {
            labels_per_class,
            eval_fraction: self.eval_fraction,
            seed,
            imbalance_ratio: self.imbalance_ratio,
        };
        datagen::split_with(pool, &opts)
    }

    pub fn label(&self) -> String {
        match &self.csv {
            Some(p) => p.display().to_string(),
            None => format!("{}(C={}, noise={})", self.kind, self.classes, self.noise),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanConfig {
    pub algorithms: Vec<String>,
    pub labels_per_class: Vec<usize>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub jobs: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            algorithms: ["pl", "flex-pl", "uda", "flex-uda", "fixmatch", "flexmatch"]
                .map(String::from)
                .to_vec(),
            labels_per_class: vec![4, 25],
            seeds: vec![1, 2, 3],
            out: PathBuf::from("results"),
            jobs: 1,
        }
    }
}

/// A named algorithm variant defined in an `[algorithm.NAME]` section.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub spec: AlgorithmSpec,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Template for every run; `spec` and `seed` are overwritten per cell.
    pub train: TrainConfig,
    pub variants: Vec<Variant>,
    pub plan: PlanConfig,
}

impl ExperimentConfig {
    /// Resolves a variant name: `[algorithm.NAME]` sections first, then presets.
    pub fn algorithm(&self, name: &str) -> Result<AlgorithmSpec> {
        match self.variants.iter().find(|v| v.name == name) {
            Some(v) => Ok(v.spec.clone()),
            None => AlgorithmSpec::preset(name),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        Parser::new(path).run(text)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.plan;
        if p.algorithms.is_empty() || p.labels_per_class.is_empty() || p.seeds.is_empty() {
            return Err(Error::Config("plan cross product is empty".into()));
        }
        if p.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        for name in &p.algorithms {
            let mut cfg = self.train.clone();
            cfg.spec = self.algorithm(name)?;
            cfg.validate()?;
        }
        Ok(())
    }
}

struct Parser<'a> {
    path: &'a Path,
    cfg: ExperimentConfig,
    section: Section,
    seen: Vec<(String, String)>,
    algorithms_line: usize,
}

#[derive(Clone, PartialEq)]
enum Section {
    None,
    Dataset,
    Train,
    Augment,
    Plan,
    Algorithm(usize),
}

impl<'a> Parser<'a> {
    fn new(path: &'a Path) -> Self {
        Self {
            path,
            cfg: ExperimentConfig::default(),
            section: Section::None,
            seen: Vec::new(),
            algorithms_line: 0,
        }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn run(mut self, text: &str) -> Result<ExperimentConfig> {
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| self.err(line_no, "unterminated section header"))?
                    .trim();
                self.enter(name, line_no)?;
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| self.err(line_no, format!("expected key = value, found '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let section_tag = self.section_tag();
            if self.seen.iter().any(|(s, k)| *s == section_tag && k == key) {
                return Err(self.err(line_no, format!("duplicate key '{key}'")));
            }
            self.seen.push((section_tag, key.to_string()));
            self.set(key, value, line_no)?;
        }
        for name in &self.cfg.plan.algorithms {
            if let Err(e) = self.cfg.algorithm(name) {
                return Err(self.err(self.algorithms_line, e.to_string()));
            }
        }
        Ok(self.cfg)
    }

    fn section_tag(&self) -> String {
        match &self.section {
            Section::Algorithm(i) => format!("algorithm.{}", self.cfg.variants[*i].name),
            Section::None => String::new(),
            Section::Dataset => "dataset".into(),
            Section::Train => "train".into(),
            Section::Augment => "augment".into(),
            Section::Plan => "plan".into(),
        }
    }

    fn enter(&mut self, name: &str, line: usize) -> Result<()> {
        self.section = match name {
            "dataset" => Section::Dataset,
            "train" => Section::Train,
            "augment" => Section::Augment,
            "plan" => Section::Plan,
            other => match other.strip_prefix("algorithm.") {
                Some(v) if !v.is_empty() && !v.contains(|c: char| c.is_whitespace() || c == ',') => {
                    if self.cfg.variants.iter().any(|x| x.name == v) {
                        return Err(self.err(line, format!("algorithm '{v}' defined twice")));
                    }
                    // Custom names start from the preset of the same name, if any.
                    let spec = AlgorithmSpec::preset(v).unwrap_or_else(|_| AlgorithmSpec::fixmatch());
                    self.cfg.variants.push(Variant {
                        name: v.to_string(),
                        spec,
                    });
                    Section::Algorithm(self.cfg.variants.len() - 1)
                }
                _ => return Err(self.err(line, format!("unknown section '[{other}]'"))),
            },
        };
        Ok(())
    }

    fn value<T: FromStr>(&self, key: &str, value: &str, line: usize, what: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| self.err(line, format!("{key}: expected {what}, found '{value}'")))
    }

    fn list<T: FromStr>(&self, key: &str, value: &str, line: usize, what: &str) -> Result<Vec<T>> {
        value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| self.value(key, s, line, what))
            .collect()
    }

    fn boolean(&self, key: &str, value: &str, line: usize) -> Result<bool> {
        match value {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            _ => Err(self.err(line, format!("{key}: expected a boolean, found '{value}'"))),
        }
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let unknown = |p: &Self| p.err(line, format!("unknown key '{key}' in [{}]", p.section_tag()));
        match self.section.clone() {
            Section::None => {
                return Err(self.err(line, format!("key '{key}' outside of any section")));
            }
            Section::Dataset => {
                let mut d = self.cfg.dataset.clone();
                match key {
                    "kind" => {
                        d.kind = value.parse().map_err(|e: Error| self.err(line, e.to_string()))?
                    }
                    "n_total" => d.n_total = self.value(key, value, line, "an integer")?,
                    "classes" => d.classes = self.value(key, value, line, "an integer")?,
                    "noise" => d.noise = self.value(key, value, line, "a number")?,
                    "seed" => d.seed = self.value(key, value, line, "an integer")?,
                    "eval_fraction" => d.eval_fraction = self.value(key, value, line, "a number")?,
                    "imbalance_ratio" => d.imbalance_ratio = self.value(key, value, line, "a number")?,
                    "csv" => d.csv = Some(PathBuf::from(value)),
                    _ => return Err(unknown(self)),
                }
                self.cfg.dataset = d;
            }
            Section::Train => {
                let mut t = self.cfg.train.clone();
                match key {
                    "batch_size" => t.batch_size = self.value(key, value, line, "an integer")?,
                    "iterations" => t.iterations = self.value(key, value, line, "an integer")?,
                    "lr" => t.lr = self.value(key, value, line, "a number")?,
                    "momentum" => t.momentum = self.value(key, value, line, "a number")?,
                    "ema" => t.ema = self.value(key, value, line, "a number")?,
                    "weight_decay" => t.weight_decay = self.value(key, value, line, "a number")?,
                    "checkpoint_every" => t.checkpoint_every = self.value(key, value, line, "an integer")?,
                    "mapping" => {
                        t.mapping = value
                            .parse::<Mapping>()
                            .map_err(|e| self.err(line, e.to_string()))?
                    }
                    "warmup" => t.warmup = self.boolean(key, value, line)?,
                    "threshold_floor" => t.threshold_floor = self.value(key, value, line, "a number")?,
                    "hidden" => t.hidden = self.list(key, value, line, "a list of integers")?,
                    _ => return Err(unknown(self)),
                }
                self.cfg.train = t;
            }
            Section::Augment => {
                let mut a = self.cfg.train.augment.clone();
                match key {
                    "weak_noise_sigma" => a.weak_noise_sigma = self.value(key, value, line, "a number")?,
                    "strong_noise_sigma" => a.strong_noise_sigma = self.value(key, value, line, "a number")?,
                    "strong_dropout_prob" => a.strong_dropout_prob = self.value(key, value, line, "a number")?,
                    "strong_scale_range" => {
                        let v: Vec<f64> = self.list(key, value, line, "two numbers")?;
                        if v.len() != 2 {
                            return Err(self.err(line, format!("{key}: expected two numbers 'lo, hi'")));
                        }
                        a.strong_scale_range = (v[0], v[1]);
                    }
                    _ => return Err(unknown(self)),
                }
                self.cfg.train.augment = a;
            }
            Section::Plan => {
                let mut p = self.cfg.plan.clone();
                match key {
                    "algorithms" => {
                        p.algorithms = self.list(key, value, line, "a list of names")?;
                        self.algorithms_line = line;
                    }
                    "labels_per_class" => p.labels_per_class = self.list(key, value, line, "a list of integers")?,
                    "seeds" => p.seeds = self.list(key, value, line, "a list of integers")?,
                    "out" => p.out = PathBuf::from(value),
                    "jobs" => p.jobs = self.value(key, value, line, "an integer")?,
                    _ => return Err(unknown(self)),
                }
                self.cfg.plan = p;
            }
            Section::Algorithm(i) => {
                let mut s = self.cfg.variants[i].spec.clone();
                match key {
                    "base" => {
                        s = AlgorithmSpec::preset(value).map_err(|e| self.err(line, e.to_string()))?
                    }
                    "family" => {
                        s.family = Family::parse(value).map_err(|e| self.err(line, e.to_string()))?
                    }
                    "flexible" => s.flexible = self.boolean(key, value, line)?,
                    "tau" => s.tau = self.value(key, value, line, "a number")?,
                    "temperature" => s.temperature = self.value(key, value, line, "a number")?,
                    "mu" => s.mu = self.value(key, value, line, "an integer")?,
                    "lambda" => s.lambda = self.value(key, value, line, "a number")?,
                    "class_balance_weight" => s.class_balance_weight = self.value(key, value, line, "a number")?,
                    _ => return Err(unknown(self)),
                }
                self.cfg.variants[i].spec = s;
            }
        }
        Ok(())
    }
}

/// Commented default configuration, parseable by [`ExperimentConfig::parse`].
pub fn print_defaults() -> String {
    let c = ExperimentConfig::default();
    let (d, t, a, p) = (&c.dataset, &c.train, &c.train.augment, &c.plan);
    let join = |v: Vec<String>| v.join(", ");
    format!(
        "# flexssl experiment configuration (all values shown are the defaults)

[dataset]
# two_moons | blobs | rings
kind = {kind}
n_total = {n_total}
classes = {classes}
noise = {noise}
# seed of the generated pool; splits use the run seed
seed = {dseed}
eval_fraction = {eval_fraction}
# >1 shrinks the unlabeled pool of later classes geometrically
imbalance_ratio = {imbalance}
# csv = path/to/pool.csv   (f1..fd,label; replaces the generated pool)

[train]
# labeled batch size B; unlabeled batches hold mu*B samples
batch_size = {b}
iterations = {k}
lr = {lr}
momentum = {momentum}
ema = {ema}
# decoupled, weights only: w <- w * (1 - lr * weight_decay)
weight_decay = {wd}
checkpoint_every = {every}
# concave | linear | convex
mapping = {mapping}
warmup = {warmup}
threshold_floor = {floor}
hidden = {hidden}

[augment]
# noise sigmas are in units of feature standard deviation
weak_noise_sigma = {weak}
strong_noise_sigma = {strong}
strong_dropout_prob = {dropout}
strong_scale_range = {lo}, {hi}

# Custom variants: [algorithm.NAME] with base = <preset> and overrides among
# family, flexible, tau, temperature, mu, lambda, class_balance_weight.
# Presets: {presets}
#
# [algorithm.fixmatch_lb]
# base = fixmatch
# class_balance_weight = 1

[plan]
algorithms = {algorithms}
labels_per_class = {lpc}
seeds = {seeds}
out = {out}
jobs = {jobs}
",
        kind = d.kind,
        n_total = d.n_total,
        classes = d.classes,
        noise = d.noise,
        dseed = d.seed,
        eval_fraction = d.eval_fraction,
        imbalance = d.imbalance_ratio,
        b = t.batch_size,
        k = t.iterations,
        lr = t.lr,
        momentum = t.momentum,
        ema = t.ema,
        wd = t.weight_decay,
        every = t.checkpoint_every,
        mapping = t.mapping,
        warmup = t.warmup,
        floor = t.threshold_floor,
        hidden = join(t.hidden.iter().map(|h| h.to_string()).collect()),
        weak = a.weak_noise_sigma,
        strong = a.strong_noise_sigma,
        dropout = a.strong_dropout_prob,
        lo = a.strong_scale_range.0,
        hi = a.strong_scale_range.1,
        presets = AlgorithmSpec::PRESETS.join(", "),
        algorithms = p.algorithms.join(", "),
        lpc = join(p.labels_per_class.iter().map(|v| v.to_string()).collect()),
        seeds = join(p.seeds.iter().map(|v| v.to_string()).collect()),
        out = p.out.display(),
        jobs = p.jobs,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("test.cfg"))
    }

    fn line_of(e: Error) -> usize {
        match e {
            Error::Parse { line, .. } => line,
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = parse(&print_defaults()).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_and_custom_variant() {
        let cfg = parse(
            "[dataset]\nkind = blobs\nclasses = 4\n\n[train]\niterations = 500\nmapping = linear\nwarmup = off\n\
             [algorithm.fm90]\nbase = flexmatch\ntau = 0.9\n[plan]\nalgorithms = fm90, pl\nseeds = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.dataset.kind, SyntheticKind::Blobs);
        assert_eq!(cfg.train.iterations, 500);
        assert!(!cfg.train.warmup);
        let fm = cfg.algorithm("fm90").unwrap();
        assert!(fm.flexible && fm.tau == 0.9 && fm.mu == 7);
        assert_eq!(cfg.plan.seeds, vec![5]);
    }

    #[test]
    fn unknown_key_names_line() {
        let e = parse("[train]\niterations = 10\nlearning_rate = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("learning_rate"));
        assert_eq!(line_of(e), 3);
    }

    #[test]
    fn type_mismatch_names_line() {
        assert_eq!(line_of(parse("\n[train]\nbatch_size = lots\n").unwrap_err()), 3);
        assert_eq!(line_of(parse("[train]\nwarmup = maybe\n").unwrap_err()), 2);
        assert_eq!(line_of(parse("[augment]\nstrong_scale_range = 0.5\n").unwrap_err()), 2);
    }

    #[test]
    fn structural_errors() {
        assert_eq!(line_of(parse("kind = blobs\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("[datasets]\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("[dataset]\nkind = blobs\nkind = rings\n").unwrap_err()), 3);
        assert_eq!(line_of(parse("[plan]\nalgorithms = mixmatch\n").unwrap_err()), 2);
        assert_eq!(line_of(parse("[dataset]\nkind = spirals\n").unwrap_err()), 2);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            ExperimentConfig::load(Path::new("/nonexistent/flexssl.cfg")),
            Err(Error::Io { .. })
        ));
    }
}
