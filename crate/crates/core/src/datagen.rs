//! Synthetic datasets, labeled/unlabeled/eval splits, μ-ratio batching and
//! CSV ingestion.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numkit::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    TwoMoons,
    Blobs,
    Rings,
}

impl SyntheticKind {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::TwoMoons => "two_moons",
            SyntheticKind::Blobs => "blobs",
            SyntheticKind::Rings => "rings",
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_moons" | "moons" => Ok(SyntheticKind::TwoMoons),
            "blobs" => Ok(SyntheticKind::Blobs),
            "rings" => Ok(SyntheticKind::Rings),
            other => Err(Error::Config(format!(
                "unsupported dataset kind '{other}' (expected two_moons, blobs or rings)"
            ))),
        }
    }
}

/// Feature rows with class labels in `0..class_count`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPool {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledPool {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Argument(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if !features.is_finite() {
            return Err(Error::Argument("features must be finite".into()));
        }
        Ok(Self {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    fn subset(&self, idx: &[usize]) -> LabeledPool {
        LabeledPool {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Writes `f1..fd,label` CSV. Rows keep pool order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.feature_dim();
        let header: Vec<String> = (1..=d).map(|j| format!("f{j}")).collect();
        writeln!(out, "{},label", header.join(","))?;
        for (row, label) in self.features.row_iter().zip(&self.labels) {
            for v in row {
                write!(out, "{v},")?;
            }
            writeln!(out, "{label}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Balanced synthetic pool (class sizes differ by at most one), deterministic
/// for a seed. Two-moons supports exactly two classes.
pub fn make_synthetic(
    kind: SyntheticKind,
    n_total: usize,
    class_count: usize,
    noise: f64,
    seed: u64,
) -> Result<LabeledPool> {
    if class_count == 0 || n_total < class_count {
        return Err(Error::Config(format!(
            "need at least one sample per class ({n_total} samples, {class_count} classes)"
        )));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::Config(format!("noise {noise} must be non-negative")));
    }
    if kind == SyntheticKind::TwoMoons && class_count != 2 {
        return Err(Error::Config(format!(
            "two_moons has exactly 2 classes, got {class_count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<([f64; 2], usize)> = Vec::with_capacity(n_total);
    for c in 0..class_count {
        let n_c = n_total / class_count + usize::from(c < n_total % class_count);
        for _ in 0..n_c {
            let p = match kind {
                SyntheticKind::TwoMoons => {
                    let t = rng.random_range(0.0..=PI);
                    if c == 0 {
                        [t.cos(), t.sin()]
                    } else {
                        [1.0 - t.cos(), 0.5 - t.sin()]
                    }
                }
                SyntheticKind::Blobs => {
                    if class_count == 1 {
                        [0.0, 0.0]
                    } else {
                        let a = 2.0 * PI * c as f64 / class_count as f64;
                        [3.0 * a.cos(), 3.0 * a.sin()]
                    }
                }
                SyntheticKind::Rings => {
                    let a = rng.random_range(0.0..2.0 * PI);
                    let r = (c + 1) as f64;
                    [r * a.cos(), r * a.sin()]
                }
            };
            let jitter: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            rows.push(([p[0] + noise * jitter[0], p[1] + noise * jitter[1]], c));
        }
    }
    rows.shuffle(&mut rng);
    let features = Matrix::from_rows(&rows.iter().map(|(p, _)| *p).collect::<Vec<_>>())?;
    let labels = rows.iter().map(|(_, c)| *c).collect();
    LabeledPool::new(features, labels, class_count)
}

/// Split parameters. `imbalance_ratio` r ≥ 1 thins the unlabeled pool so
/// class c keeps a fraction r^(−c/(C−1)) of its samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitOptions {
    pub labels_per_class: usize,
    pub eval_fraction: f64,
    pub seed: u64,
    pub imbalance_ratio: f64,
}

impl SplitOptions {
    pub fn new(labels_per_class: usize, eval_fraction: f64, seed: u64) -> Self {
        Self {
            labels_per_class,
            eval_fraction,
            seed,
            imbalance_ratio: 1.0,
        }
    }
}

/// Labeled, unlabeled and held-out evaluation data. Unlabeled samples are
/// addressed by their stable row index `0..N`; their true classes are kept
/// only for diagnostics and are not reachable through [`BatchPair`].
#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub labeled: LabeledPool,
    pub unlabeled: Matrix,
    pub eval: LabeledPool,
    unlabeled_truth: Vec<usize>,
    /// Pool row of every labeled, unlabeled and eval sample, in that order.
    pub(crate) provenance: (Vec<usize>, Vec<usize>, Vec<usize>),
}

impl SplitDataset {
    pub fn class_count(&self) -> usize {
        self.labeled.class_count
    }

    pub fn feature_dim(&self) -> usize {
        self.labeled.feature_dim()
    }

    pub fn unlabeled_len(&self) -> usize {
        self.unlabeled.rows()
    }

    /// True class of unlabeled sample `index` (diagnostics only).
    pub fn diagnostic_label(&self, index: usize) -> Option<usize> {
        self.unlabeled_truth.get(index).copied()
    }

    pub fn pool_rows(&self) -> (&[usize], &[usize], &[usize]) {
        (&self.provenance.0, &self.provenance.1, &self.provenance.2)
    }

    /// Per-feature mean and standard deviation over labeled ∪ unlabeled.
    pub fn training_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.feature_dim();
        let rows = self.labeled.features.row_iter().chain(self.unlabeled.row_iter());
        let n = (self.labeled.len() + self.unlabeled.rows()) as f64;
        let mut mean = vec![0.0; d];
        for r in rows.clone() {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        (mean, std)
    }

    /// Copy with every feature shifted and scaled by the training moments.
    pub fn standardized(&self) -> SplitDataset {
        let (mean, std) = self.training_moments();
        let apply = |m: &Matrix| {
            let mut m = m.clone();
            for r in 0..m.rows() {
                for (j, v) in m.row_mut(r).iter_mut().enumerate() {
                    *v = (*v - mean[j]) / std[j];
                }
            }
            m
        };
        let mut out = self.clone();
        out.labeled.features = apply(&self.labeled.features);
        out.unlabeled = apply(&self.unlabeled);
        out.eval.features = apply(&self.eval.features);
        out
    }
}

/// Stratified split: the eval set is held out first (per class), then exactly
/// `labels_per_class` training samples per class become labeled and the rest
/// unlabeled.
pub fn split(
    pool: &LabeledPool,
    labels_per_class: usize,
    eval_fraction: f64,
    seed: u64,
) -> Result<SplitDataset> {
    split_with(pool, &SplitOptions::new(labels_per_class, eval_fraction, seed))
}

pub fn split_with(pool: &LabeledPool, opts: &SplitOptions) -> Result<SplitDataset> {
    let c_count = pool.class_count;
    if !(0.0..1.0).contains(&opts.eval_fraction) {
        return Err(Error::Config(format!(
            "eval_fraction {} must lie in [0, 1)",
            opts.eval_fraction
        )));
    }
    if !(opts.imbalance_ratio.is_finite() && opts.imbalance_ratio >= 1.0) {
        return Err(Error::Config(format!(
            "imbalance_ratio {} must be >= 1",
            opts.imbalance_ratio
        )));
    }
    if opts.labels_per_class == 0 {
        return Err(Error::Config("labels_per_class must be positive".into()));
    }
    let train_capacity = pool.len() as f64 * (1.0 - opts.eval_fraction);
    if (opts.labels_per_class * c_count) as f64 > train_capacity + 1e-9 {
        return Err(Error::Config(format!(
            "{} labels per class × {c_count} classes exceeds the {train_capacity} training samples",
            opts.labels_per_class
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c_count];
    for (i, &l) in pool.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let (mut eval_idx, mut lab_idx, mut unl_idx) = (Vec::new(), Vec::new(), Vec::new());
    for (c, rows) in by_class.iter_mut().enumerate() {
        rows.shuffle(&mut rng);
        let n_eval = (rows.len() as f64 * opts.eval_fraction).round() as usize;
        let (eval_part, train_part) = rows.split_at(n_eval);
        if train_part.len() < opts.labels_per_class {
            return Err(Error::Config(format!(
                "class {c} has {} training samples, fewer than {} labels per class",
                train_part.len(),
                opts.labels_per_class
            )));
        }
        eval_idx.extend_from_slice(eval_part);
        let (lab, rest) = train_part.split_at(opts.labels_per_class);
        lab_idx.extend_from_slice(lab);
        let keep = if c_count > 1 {
            let frac = opts.imbalance_ratio.powf(-(c as f64) / (c_count - 1) as f64);
            (rest.len() as f64 * frac).round() as usize
        } else {
            rest.len()
        };
        unl_idx.extend_from_slice(&rest[..keep.min(rest.len())]);
    }
    // Interleave classes so that stable indices carry no class ordering.
    eval_idx.shuffle(&mut rng);
    lab_idx.shuffle(&mut rng);
    unl_idx.shuffle(&mut rng);

    Ok(SplitDataset {
        labeled: pool.subset(&lab_idx),
        unlabeled: pool.features.select_rows(&unl_idx),
        eval: pool.subset(&eval_idx),
        unlabeled_truth: unl_idx.iter().map(|&i| pool.labels[i]).collect(),
        provenance: (lab_idx, unl_idx, eval_idx),
    })
}

/// Every training sample labeled (largest balanced budget), no unlabeled set.
pub fn split_fully_labeled(pool: &LabeledPool, eval_fraction: f64, seed: u64) -> Result<SplitDataset> {
    let per_class = pool
        .class_counts()
        .iter()
        .map(|&n| n - (n as f64 * eval_fraction).round() as usize)
        .min()
        .unwrap_or(0);
    split(pool, per_class, eval_fraction, seed)
}

/// One training step's data: `B` labeled samples and `μB` unlabeled samples
/// with their stable indices.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPair {
    pub labeled_x: Matrix,
    pub labeled_y: Vec<usize>,
    pub unlabeled_x: Matrix,
    pub unlabeled_idx: Vec<usize>,
}

/// Draws labeled samples uniformly with replacement and walks the unlabeled
/// set in reshuffled cycles, so every index appears once per cycle.
#[derive(Clone, Debug, Default)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_labeled<R: Rng + ?Sized>(
        &mut self,
        data: &SplitDataset,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<(Matrix, Vec<usize>)> {
        if data.labeled.is_empty() {
            return Err(Error::Config("labeled set is empty".into()));
        }
        let idx: Vec<usize> = (0..batch_size)
            .map(|_| rng.random_range(0..data.labeled.len()))
            .collect();
        let y = idx.iter().map(|&i| data.labeled.labels[i]).collect();
        Ok((data.labeled.features.select_rows(&idx), y))
    }

    pub fn next_unlabeled_indices<R: Rng + ?Sized>(
        &mut self,
        n_unlabeled: usize,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if n_unlabeled == 0 {
            return Err(Error::Config("unlabeled set is empty".into()));
        }
        if self.order.len() != n_unlabeled {
            self.order = (0..n_unlabeled).collect();
            self.cursor = n_unlabeled;
        }
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        Ok(out)
    }

    pub fn next_batch<R: Rng + ?Sized>(
        &mut self,
        data: &SplitDataset,
        batch_size: usize,
        mu: usize,
        rng: &mut R,
    ) -> Result<BatchPair> {
        if data.unlabeled.rows() == 0 {
            return Err(Error::Config("unlabeled set is empty".into()));
        }
        let (labeled_x, labeled_y) = self.next_labeled(data, batch_size, rng)?;
        let unlabeled_idx = self.next_unlabeled_indices(data.unlabeled.rows(), mu * batch_size, rng)?;
        Ok(BatchPair {
            labeled_x,
            labeled_y,
            unlabeled_x: data.unlabeled.select_rows(&unlabeled_idx),
            unlabeled_idx,
        })
    }
}

/// Reads a `f1..fd,label` CSV with 0-based contiguous integer labels.
pub fn load_csv(path: &Path) -> Result<LabeledPool> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

fn parse_csv(text: &str, path: &Path) -> Result<LabeledPool> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(perr(1, e.to_string())),
        None => return Err(perr(1, "empty file".into())),
    };
    let width = header.len();
    if width < 2 || header.get(width - 1).map(str::trim) != Some("label") {
        return Err(perr(1, "header must be f1,...,fd,label".into()));
    }
    for (j, name) in header.iter().take(width - 1).enumerate() {
        if name.trim() != format!("f{}", j + 1) {
            return Err(perr(1, format!("expected column f{}, found '{name}'", j + 1)));
        }
    }
    let d = width - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut label_lines = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if rec.len() != width {
            return Err(perr(line, format!("expected {width} fields, found {}", rec.len())));
        }
        for j in 0..d {
            let raw = rec.get(j).unwrap_or_default().trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| perr(line, format!("f{} '{raw}' is not a number", j + 1)))?;
            if !v.is_finite() {
                return Err(perr(line, format!("f{} is not finite", j + 1)));
            }
            data.push(v);
        }
        let raw = rec.get(d).unwrap_or_default().trim();
        let l: usize = raw
            .parse()
            .map_err(|_| perr(line, format!("label '{raw}' is not a non-negative integer")))?;
        labels.push(l);
        label_lines.push(line);
    }
    if labels.is_empty() {
        return Err(perr(1, "no data rows".into()));
    }
    let distinct: BTreeSet<usize> = labels.iter().copied().collect();
    let class_count = distinct.len();
    if let Some(missing) = (0..class_count).find(|c| !distinct.contains(c)) {
        let (pos, bad) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l > missing)
            .expect("a label above the gap exists");
        return Err(perr(
            label_lines[pos],
            format!("label {bad} is not contiguous: class {missing} never appears"),
        ));
    }
    let features = Matrix::from_vec(labels.len(), d, data)?;
    LabeledPool::new(features, labels, class_count)
}
