//! Loss terms for supervised training, pseudo-labeling, UDA and FixMatch,
//! each with an optional curriculum (flexible-threshold) variant.

use std::fmt;

use rand::Rng;

use crate::augment::Augmenter;
use crate::cpl::{Confidence, CurriculumState, ThresholdVector};
use crate::error::{Error, Result};
use crate::numkit::{argmax, log_softmax, softmax, softmax_row, Matrix, Mlp, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Labeled data only; no unlabeled branch.
    Supervised,
    /// Hard targets; targets and predictions both come from weak views.
    PseudoLabel,
    /// Sharpened soft targets from the weak view, predictions on a strong view.
    Uda,
    /// Hard targets from the weak view, predictions on a strong view.
    FixMatch,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Supervised => "supervised",
            Family::PseudoLabel => "pseudo_label",
            Family::Uda => "uda",
            Family::FixMatch => "fixmatch",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Family::Supervised),
            "pseudo_label" | "pl" => Ok(Family::PseudoLabel),
            "uda" => Ok(Family::Uda),
            "fixmatch" => Ok(Family::FixMatch),
            other => Err(Error::Config(format!("unknown algorithm family '{other}'"))),
        }
    }
}

/// Algorithm-dependent hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmSpec {
    pub family: Family,
    /// Curriculum (flexible per-class) thresholds instead of a fixed τ.
    pub flexible: bool,
    pub tau: f64,
    /// Sharpening temperature; only used by UDA.
    pub temperature: f64,
    /// Unlabeled-to-labeled batch ratio.
    pub mu: usize,
    /// Weight of the unsupervised term.
    pub lambda: f64,
    /// Weight of the batch class-balancing KL term; 0 disables it.
    pub class_balance_weight: f64,
}

impl AlgorithmSpec {
    pub const PRESETS: [&'static str; 7] = [
        "pl",
        "flex-pl",
        "uda",
        "flex-uda",
        "fixmatch",
        "flexmatch",
        "supervised",
    ];

    pub fn pseudo_label() -> Self {
        Self {
            family: Family::PseudoLabel,
            flexible: false,
            tau: 0.95,
            temperature: 1.0,
            mu: 1,
            lambda: 1.0,
            class_balance_weight: 0.0,
        }
    }

    pub fn uda() -> Self {
        Self {
            family: Family::Uda,
            tau: 0.8,
            temperature: 0.5,
            mu: 7,
            ..Self::pseudo_label()
        }
    }

    pub fn fixmatch() -> Self {
        Self {
            family: Family::FixMatch,
            mu: 7,
            ..Self::pseudo_label()
        }
    }

    pub fn supervised() -> Self {
        Self {
            family: Family::Supervised,
            lambda: 0.0,
            ..Self::pseudo_label()
        }
    }

    pub fn flex(mut self) -> Self {
        self.flexible = true;
        self
    }

    /// Looks up a preset by name (`pl`, `flex-pl`, `uda`, `flex-uda`,
    /// `fixmatch`, `flexmatch`, `supervised`).
    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "pl" | "pseudo_label" => Ok(Self::pseudo_label()),
            "flex-pl" => Ok(Self::pseudo_label().flex()),
            "uda" => Ok(Self::uda()),
            "flex-uda" => Ok(Self::uda().flex()),
            "fixmatch" => Ok(Self::fixmatch()),
            "flexmatch" => Ok(Self::fixmatch().flex()),
            "supervised" => Ok(Self::supervised()),
            other => Err(Error::Config(format!(
                "unknown algorithm '{other}' (presets: {})",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau {} must lie in (0, 1]", self.tau)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if self.mu == 0 {
            return Err(Error::Config("mu must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.class_balance_weight >= 0.0 && self.class_balance_weight.is_finite()) {
            return Err(Error::Config("class_balance_weight must be >= 0".into()));
        }
        if self.family == Family::Supervised && self.flexible {
            return Err(Error::Config("supervised training has no thresholds to flex".into()));
        }
        Ok(())
    }

    pub fn uses_unlabeled(&self) -> bool {
        self.family != Family::Supervised
    }

    /// Display label in the usual table style, e.g. `Flex-UDA`, `FlexMatch`.
    pub fn label(&self) -> String {
        match (self.family, self.flexible) {
            (Family::Supervised, _) => "Supervised".into(),
            (Family::PseudoLabel, false) => "PL".into(),
            (Family::PseudoLabel, true) => "Flex-PL".into(),
            (Family::Uda, false) => "UDA".into(),
            (Family::Uda, true) => "Flex-UDA".into(),
            (Family::FixMatch, false) => "FixMatch".into(),
            (Family::FixMatch, true) => "FlexMatch".into(),
        }
    }
}

impl fmt::Display for AlgorithmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Class(usize),
    Soft(&'a [f64]),
}

/// `H(t, p) = −Σ t_c log p_c`
pub fn cross_entropy(target: Target<'_>, p: &[f64]) -> f64 {
    match target {
        Target::Class(k) => -p[k].ln(),
        Target::Soft(t) => -t.iter().zip(p).map(|(t, p)| t * p.ln()).sum::<f64>(),
    }
}

/// `q_c ∝ p_c^{1/T}`
pub fn sharpen(p: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Argument(format!("temperature {temperature} must be positive")));
    }
    if p.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Argument("sharpen needs strictly positive probabilities".into()));
    }
    // Work in log space so tiny probabilities with small T do not underflow.
    let mut q: Vec<f64> = p.iter().map(|v| v.ln() / temperature).collect();
    softmax_row(&mut q);
    Ok(q)
}

/// `Σ_c q_c log(q_c / p̂_c)` with q uniform and p̂ the batch-mean prediction.
pub fn class_balance_loss(probs: &Matrix) -> Result<f64> {
    if probs.rows() == 0 {
        return Err(Error::Argument("class balance needs a non-empty batch".into()));
    }
    let mean = column_mean(probs);
    if mean.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::Argument("batch-mean probabilities must be positive".into()));
    }
    let q = 1.0 / probs.cols() as f64;
    Ok(mean.iter().map(|&m| q * (q / m).ln()).sum())
}

fn column_mean(m: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; m.cols()];
    for row in m.row_iter() {
        mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    mean.iter_mut().for_each(|a| *a /= m.rows() as f64);
    mean
}

/// Gradient of [`class_balance_loss`] with respect to the logits behind `probs`.
fn class_balance_grad(probs: &Matrix) -> Matrix {
    let n = probs.rows() as f64;
    let q = 1.0 / probs.cols() as f64;
    let mean = column_mean(probs);
    // ∂L/∂p_bc = −q / (n p̂_c); chain through the softmax Jacobian.
    let g: Vec<f64> = mean.iter().map(|&m| -q / (n * m)).collect();
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let dot: f64 = g.iter().zip(p).map(|(g, p)| g * p).sum();
        for (o, (&pk, &gk)) in out.row_mut(r).iter_mut().zip(p.iter().zip(&g)) {
            *o = pk * (gk - dot);
        }
    }
    out
}

/// `L_s + λ·L_u`
pub fn total_loss(spec: &AlgorithmSpec, supervised: f64, unsupervised: f64) -> f64 {
    supervised + spec.lambda * unsupervised
}

/// Mean cross-entropy of a weak-augmented labeled batch, with its gradient.
pub struct SupervisedStep {
    pub loss: f64,
    pub tape: Tape,
    pub grad_logits: Matrix,
}

pub fn supervised_step<R: Rng + ?Sized>(
    model: &Mlp,
    x: &Matrix,
    y: &[usize],
    aug: &Augmenter,
    rng: &mut R,
) -> Result<SupervisedStep> {
    if x.rows() != y.len() || y.is_empty() {
        return Err(Error::Shape(format!(
            "{} labeled rows with {} labels",
            x.rows(),
            y.len()
        )));
    }
    let xw = aug.weak_batch(x, rng)?;
    let tape = model.forward_tape(&xw)?;
    let logits = tape.logits()?;
    let logp = log_softmax(logits);
    let n = y.len() as f64;
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (r, &label) in y.iter().enumerate() {
        if label >= model.class_count() {
            return Err(Error::Argument(format!("label {label} out of range")));
        }
        loss -= logp.get(r, label);
        let g = grad.row_mut(r);
        g[label] -= 1.0;
        g.iter_mut().for_each(|v| *v /= n);
    }
    Ok(SupervisedStep {
        loss: loss / n,
        tape,
        grad_logits: grad,
    })
}

/// `(1/B) Σ H(y_b, p(y | ω(x_b)))`
pub fn supervised_loss<R: Rng + ?Sized>(
    model: &Mlp,
    x: &Matrix,
    y: &[usize],
    aug: &Augmenter,
    rng: &mut R,
) -> Result<f64> {
    supervised_step(model, x, y, aug, rng).map(|s| s.loss)
}

#[derive(Clone, Debug, PartialEq)]
pub enum PseudoLabel {
    Hard(usize),
    Soft(Vec<f64>),
}

impl PseudoLabel {
    pub fn class(&self) -> usize {
        match self {
            PseudoLabel::Hard(c) => *c,
            PseudoLabel::Soft(q) => argmax(q),
        }
    }

    fn as_target(&self) -> Target<'_> {
        match self {
            PseudoLabel::Hard(c) => Target::Class(*c),
            PseudoLabel::Soft(q) => Target::Soft(q),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnsupBatchResult {
    pub loss: f64,
    pub mask: Vec<bool>,
    /// Fraction of the batch passing the mask.
    pub utilization: f64,
    pub pseudo_labels: Vec<PseudoLabel>,
    /// Class-balance KL of the prediction branch (0 when disabled).
    pub class_balance: f64,
}

/// Unsupervised term plus what backward needs.
pub struct UnsupervisedStep {
    pub result: UnsupBatchResult,
    pub tape: Tape,
    /// `∂(λ·L_u + w_b·L_b)/∂logits` of the prediction branch.
    pub grad_logits: Matrix,
}

/// Where the mask thresholds come from.
pub enum Thresholds<'a> {
    Fixed(f64),
    Curriculum(&'a mut CurriculumState),
}

pub fn unsupervised_step<R: Rng + ?Sized>(
    spec: &AlgorithmSpec,
    model: &Mlp,
    x: &Matrix,
    indices: &[usize],
    thresholds: Thresholds<'_>,
    aug: &Augmenter,
    rng: &mut R,
) -> Result<UnsupervisedStep> {
    if x.rows() != indices.len() {
        return Err(Error::Shape(format!(
            "{} unlabeled rows with {} indices",
            x.rows(),
            indices.len()
        )));
    }
    let weak_x = aug.weak_batch(x, rng)?;
    let pred_x = match spec.family {
        Family::PseudoLabel => aug.weak_batch(x, rng)?,
        Family::Uda | Family::FixMatch => aug.strong_batch(x, rng)?,
        Family::Supervised => {
            return Err(Error::Argument("supervised training has no unsupervised term".into()))
        }
    };
    consistency_step(spec, model, &weak_x, &pred_x, indices, thresholds)
}

/// The unsupervised term on already-augmented views.
pub(crate) fn consistency_step(
    spec: &AlgorithmSpec,
    model: &Mlp,
    weak_x: &Matrix,
    pred_x: &Matrix,
    indices: &[usize],
    thresholds: Thresholds<'_>,
) -> Result<UnsupervisedStep> {
    let n = weak_x.rows();
    if n == 0 {
        return Err(Error::Argument("empty unlabeled batch".into()));
    }
    // Targets come from the live model and carry no gradient.
    let q = softmax(&model.forward(weak_x, false)?);
    let confidences: Vec<(f64, usize)> = q
        .row_iter()
        .map(|row| {
            let c = argmax(row);
            (row[c], c)
        })
        .collect();

    let (threshold_vec, curriculum) = match thresholds {
        Thresholds::Fixed(tau) => (ThresholdVector::uniform(tau, model.class_count()), None),
        Thresholds::Curriculum(state) => {
            if state.unlabeled_count() == 0 || state.class_count() != model.class_count() {
                return Err(Error::State("curriculum state does not match the data".into()));
            }
            (state.thresholds(), Some(state))
        }
    };
    let mask: Vec<bool> = confidences
        .iter()
        .map(|&(conf, c)| threshold_vec.admits(conf, c))
        .collect();

    let pseudo_labels: Vec<PseudoLabel> = match spec.family {
        Family::Uda => q
            .row_iter()
            .map(|row| sharpen(row, spec.temperature).map(PseudoLabel::Soft))
            .collect::<Result<_>>()?,
        _ => confidences.iter().map(|&(_, c)| PseudoLabel::Hard(c)).collect(),
    };

    let tape = model.forward_tape(pred_x)?;
    let logits = tape.logits()?;
    let p = softmax(logits);
    let logp = log_softmax(logits);
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, model.class_count());
    for r in 0..n {
        if !mask[r] {
            continue;
        }
        let lp = logp.row(r);
        loss -= match pseudo_labels[r].as_target() {
            Target::Class(k) => lp[k],
            Target::Soft(t) => t.iter().zip(lp).map(|(t, l)| t * l).sum::<f64>(),
        };
        // softmax + CE: ∂H/∂z = p − t (targets sum to one).
        let g = grad.row_mut(r);
        g.copy_from_slice(p.row(r));
        match pseudo_labels[r].as_target() {
            Target::Class(k) => g[k] -= 1.0,
            Target::Soft(t) => g.iter_mut().zip(t).for_each(|(g, t)| *g -= t),
        }
        g.iter_mut().for_each(|v| *v *= spec.lambda * scale);
    }
    loss *= scale;

    let class_balance = if spec.class_balance_weight > 0.0 {
        grad.axpy(spec.class_balance_weight, &class_balance_grad(&p))?;
        class_balance_loss(&p)?
    } else {
        0.0
    };

    if let Some(state) = curriculum {
        let batch: Vec<Confidence> = indices
            .iter()
            .zip(&confidences)
            .map(|(&index, &(confidence, class))| Confidence {
                index,
                confidence,
                class,
            })
            .collect();
        state.record_predictions(&batch)?;
    }

    let passed = mask.iter().filter(|&&m| m).count();
    Ok(UnsupervisedStep {
        result: UnsupBatchResult {
            loss,
            mask,
            utilization: passed as f64 / n as f64,
            pseudo_labels,
            class_balance,
        },
        tape,
        grad_logits: grad,
    })
}

/// Unsupervised loss for one unlabeled batch. Flexible specs require a
/// curriculum state, which is updated with this batch's confident predictions.
pub fn unsupervised_loss<R: Rng + ?Sized>(
    spec: &AlgorithmSpec,
    model: &Mlp,
    x: &Matrix,
    indices: &[usize],
    cpl: Option<&mut CurriculumState>,
    aug: &Augmenter,
    rng: &mut R,
) -> Result<UnsupBatchResult> {
    let thresholds = match (spec.flexible, cpl) {
        (true, Some(state)) => Thresholds::Curriculum(state),
        (true, None) => {
            return Err(Error::State("flexible thresholds need a curriculum state".into()))
        }
        (false, _) => Thresholds::Fixed(spec.tau),
    };
    unsupervised_step(spec, model, x, indices, thresholds, aug, rng).map(|s| s.result)
}
