//! Classification metrics, per-checkpoint records and run summaries.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::datagen::LabeledPool;
use crate::error::{Error, Result};
use crate::numkit::{argmax, softmax, Matrix, Mlp};

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub error: f64,
    /// Per-class accuracy (recall), 0 for classes absent from the eval set.
    pub class_accuracy: Vec<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Macro one-vs-rest AUC over classes with both positives and negatives.
    pub auc: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Metrics from predicted class distributions (one row per sample).
pub fn evaluate_probabilities(probs: &Matrix, labels: &[usize]) -> Result<Evaluation> {
    let c_count = probs.cols();
    if probs.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} prediction rows for {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c_count) {
        return Err(Error::Argument(format!("label {bad} out of range for {c_count} classes")));
    }

    let mut confusion = vec![vec![0usize; c_count]; c_count];
    for (row, &y) in probs.row_iter().zip(labels) {
        confusion[y][argmax(row)] += 1;
    }
    let correct: usize = (0..c_count).map(|c| confusion[c][c]).sum();
    let error = 1.0 - correct as f64 / labels.len() as f64;

    let mut class_accuracy = Vec::with_capacity(c_count);
    let (mut p_sum, mut f_sum) = (0.0, 0.0);
    for c in 0..c_count {
        let tp = confusion[c][c] as f64;
        let actual: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|r| r[c]).sum();
        let recall = ratio(tp, actual as f64);
        let precision = ratio(tp, predicted as f64);
        class_accuracy.push(recall);
        p_sum += precision;
        f_sum += ratio(2.0 * precision * recall, precision + recall);
    }
    let n = c_count as f64;
    let recall = class_accuracy.iter().sum::<f64>() / n;

    Ok(Evaluation {
        error,
        class_accuracy,
        precision: p_sum / n,
        recall,
        f1: f_sum / n,
        auc: macro_auc(probs, labels),
    })
}

/// Rank-based (Mann-Whitney) AUC of one score vector, ties counted half.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Tied block occupies ranks i+1..=j+1; each gets the average.
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

fn macro_auc(probs: &Matrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut defined = 0;
    for c in 0..probs.cols() {
        let scores: Vec<f64> = probs.row_iter().map(|r| r[c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if let Some(a) = binary_auc(&scores, &positive) {
            total += a;
            defined += 1;
        }
    }
    if defined == 0 {
        f64::NAN
    } else {
        total / defined as f64
    }
}

/// Evaluates either the live or the EMA parameters of `model` on `eval`.
pub fn evaluate(model: &Mlp, eval: &LabeledPool, use_ema: bool) -> Result<Evaluation> {
    if eval.is_empty() {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    let probs = softmax(&model.forward(&eval.features, use_ema)?);
    evaluate_probabilities(&probs, &eval.labels)
}

/// One checkpoint row of a run's metrics stream.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub eval: Evaluation,
    /// Mean fraction of unlabeled samples passing the mask since the previous checkpoint.
    pub utilization: f64,
    pub thresholds: Vec<f64>,
    pub loss_s: f64,
    pub loss_u: f64,
    /// Accuracy of masked-in pseudo labels against the hidden truth; NaN if none passed.
    pub pseudo_acc: f64,
}

pub fn csv_header(class_count: usize) -> String {
    let mut cols = vec!["iteration".to_string(), "error".to_string()];
    cols.extend((0..class_count).map(|c| format!("acc_{c}")));
    cols.extend(["precision", "recall", "f1", "auc", "utilization"].map(String::from));
    cols.extend((0..class_count).map(|c| format!("thr_{c}")));
    cols.extend(["loss_s", "loss_u", "pseudo_acc"].map(String::from));
    cols.join(",")
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let e = &self.eval;
        let mut cells = vec![self.iteration.to_string(), e.error.to_string()];
        cells.extend(e.class_accuracy.iter().map(f64::to_string));
        cells.extend([e.precision, e.recall, e.f1, e.auc, self.utilization].map(|v| v.to_string()));
        cells.extend(self.thresholds.iter().map(f64::to_string));
        cells.extend([self.loss_s, self.loss_u, self.pseudo_acc].map(|v| v.to_string()));
        cells.join(",")
    }
}

pub fn write_metrics_csv<W: Write>(records: &[MetricsRecord], class_count: usize, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", csv_header(class_count))?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Parses a metrics stream written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(path, e))?,
        None => return Err(parse_err(1, "missing header".into())),
    };
    let class_count = header.split(',').filter(|c| c.starts_with("acc_")).count();
    if header != csv_header(class_count) {
        return Err(parse_err(1, "unexpected metrics header".into()));
    }
    let width = 10 + 2 * class_count;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            return Err(parse_err(line_no, format!("expected {width} fields, found {}", cells.len())));
        }
        let iteration = cells[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad iteration '{}'", cells[0])))?;
        let nums: Vec<f64> = cells[1..]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| parse_err(line_no, format!("bad number '{c}'"))))
            .collect::<Result<_>>()?;
        let c = class_count;
        out.push(MetricsRecord {
            iteration,
            eval: Evaluation {
                error: nums[0],
                class_accuracy: nums[1..1 + c].to_vec(),
                precision: nums[1 + c],
                recall: nums[2 + c],
                f1: nums[3 + c],
                auc: nums[4 + c],
            },
            utilization: nums[5 + c],
            thresholds: nums[6 + c..6 + 2 * c].to_vec(),
            loss_s: nums[6 + 2 * c],
            loss_u: nums[7 + 2 * c],
            pseudo_acc: nums[8 + 2 * c],
        });
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub best_error: f64,
    /// Median error over the final 20 checkpoints (all, if fewer).
    pub median_last_20_error: f64,
    pub final_class_accuracy: Vec<f64>,
}

pub fn summarize(records: &[MetricsRecord]) -> Result<Summary> {
    let last = records
        .last()
        .ok_or_else(|| Error::Argument("no checkpoints to summarize".into()))?;
    let errors: Vec<f64> = records.iter().map(|r| r.eval.error).collect();
    let tail = &errors[errors.len().saturating_sub(20)..];
    Ok(Summary {
        best_error: errors.iter().cloned().fold(f64::INFINITY, f64::min),
        median_last_20_error: median(tail).unwrap_or(f64::NAN),
        final_class_accuracy: last.eval.class_accuracy.clone(),
    })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(labels: &[usize], c: usize) -> Matrix {
        let mut m = Matrix::zeros(labels.len(), c);
        for (r, &l) in labels.iter().enumerate() {
            m.set(r, l, 1.0);
        }
        m
    }

    #[test]
    fn perfect_classifier() {
        let y = [0, 1, 2, 1, 0, 2];
        let e = evaluate_probabilities(&one_hot(&y, 3), &y).unwrap();
        assert_eq!(e.error, 0.0);
        assert_eq!((e.precision, e.recall, e.f1, e.auc), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(e.class_accuracy, vec![1.0; 3]);
    }

    #[test]
    fn constant_predictor_macro_f1() {
        let y = [0, 1, 0, 1];
        let e = evaluate_probabilities(&one_hot(&[0; 4], 2), &y).unwrap();
        assert_eq!(e.error, 0.5);
        assert_eq!(e.f1, 1.0 / 3.0);
        assert_eq!(e.class_accuracy, vec![1.0, 0.0]);
        assert_eq!(e.precision, 0.25);
    }

    #[test]
    fn auc_handles_ties_and_order() {
        assert_eq!(binary_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]), Some(0.75));
        assert_eq!(binary_auc(&[0.5; 4], &[true, false, true, false]), Some(0.5));
        assert_eq!(binary_auc(&[0.2, 0.3], &[true, true]), None);
    }

    #[test]
    fn random_scores_auc_near_half() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let scores: Vec<f64> = (0..20_000).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..20_000).map(|_| rng.random()).collect();
        let a = binary_auc(&scores, &labels).unwrap();
        assert!((a - 0.5).abs() < 0.01, "{a}");
    }

    #[test]
    fn empty_eval_is_error() {
        assert!(evaluate_probabilities(&Matrix::zeros(0, 2), &[]).is_err());
    }

    fn record(iteration: usize, error: f64) -> MetricsRecord {
        MetricsRecord {
            iteration,
            eval: Evaluation {
                error,
                class_accuracy: vec![1.0 - error, 0.5],
                precision: 0.1,
                recall: 0.2,
                f1: 0.3,
                auc: 0.4,
            },
            utilization: 0.5,
            thresholds: vec![0.0, 0.95],
            loss_s: 1.25,
            loss_u: 0.0,
            pseudo_acc: f64::NAN,
        }
    }

    #[test]
    fn summary_examples() {
        let rs: Vec<MetricsRecord> = (1..=20).map(|i| record(i, i as f64 / 100.0)).collect();
        let s = summarize(&rs).unwrap();
        assert!((s.median_last_20_error - 0.105).abs() < 1e-15);
        assert_eq!(s.best_error, 0.01);
        let dec: Vec<MetricsRecord> = (1..=5).map(|i| record(i, 1.0 / i as f64)).collect();
        assert_eq!(summarize(&dec).unwrap().best_error, 0.2);
        let single = summarize(&[record(1, 0.3)]).unwrap();
        assert_eq!((single.best_error, single.median_last_20_error), (0.3, 0.3));
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn median_uses_last_twenty_only() {
        let rs: Vec<MetricsRecord> = (0..30).map(|i| record(i, if i < 10 { 0.0 } else { 0.5 })).collect();
        assert_eq!(summarize(&rs).unwrap().median_last_20_error, 0.5);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rs = vec![record(200, 0.125), record(400, 0.1)];
        let mut buf = Vec::new();
        write_metrics_csv(&rs, 2, &mut buf).unwrap();
        std::fs::write(&path, &buf).unwrap();
        let back = read_metrics_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].eval, rs[0].eval);
        assert!(back[0].pseudo_acc.is_nan());
        assert_eq!(
            csv_header(2),
            "iteration,error,acc_0,acc_1,precision,recall,f1,auc,utilization,thr_0,thr_1,loss_s,loss_u,pseudo_acc"
        );
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
