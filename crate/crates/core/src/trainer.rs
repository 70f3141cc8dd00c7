//! The training loop: batch sampling, loss evaluation, SGD with weight decay
//! and EMA, curriculum bookkeeping and periodic evaluation.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{AugmentConfig, Augmenter};
use crate::cpl::{CurriculumConfig, CurriculumState, Mapping};
use crate::datagen::{BatchSampler, SplitDataset};
use crate::error::{Error, Result};
use crate::metrics::{self, evaluate, MetricsRecord, Summary};
use crate::numkit::{sgd_step, Mlp, OptimizerState};
use crate::sslloss::{supervised_step, unsupervised_step, AlgorithmSpec, Thresholds};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub spec: AlgorithmSpec,
    /// Labeled batch size `B`; the unlabeled batch holds `μB` samples.
    pub batch_size: usize,
    /// Total iterations `K`.
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
    pub ema: f64,
    pub weight_decay: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub mapping: Mapping,
    pub warmup: bool,
    pub threshold_floor: f64,
    pub hidden: Vec<usize>,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            spec: AlgorithmSpec::fixmatch().flex(),
            batch_size: 64,
            iterations: 20_000,
            lr: 0.03,
            momentum: 0.9,
            ema: 0.999,
            weight_decay: 5e-4,
            checkpoint_every: 200,
            seed: 1,
            mapping: Mapping::Convex,
            warmup: true,
            threshold_floor: 0.0,
            hidden: vec![64, 64],
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.augment.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.checkpoint_every == 0 || self.checkpoint_every > self.iterations {
            return bad(format!(
                "checkpoint_every {} must lie in 1..={}",
                self.checkpoint_every, self.iterations
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must lie in [0, 1)", self.momentum));
        }
        if !(0.0..=1.0).contains(&self.ema) {
            return bad(format!("ema {} must lie in [0, 1]", self.ema));
        }
        if !(self.weight_decay >= 0.0 && self.lr * self.weight_decay < 1.0) {
            return bad(format!("weight_decay {} out of range", self.weight_decay));
        }
        if !(0.0..=self.spec.tau).contains(&self.threshold_floor) {
            return bad(format!(
                "threshold_floor {} must lie in [0, tau]",
                self.threshold_floor
            ));
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }

    pub fn curriculum_config(&self) -> CurriculumConfig {
        CurriculumConfig {
            tau: self.spec.tau,
            mapping: self.mapping,
            warmup: self.warmup,
            threshold_floor: self.threshold_floor,
        }
    }

    fn layer_sizes(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(classes);
        sizes
    }
}

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct RunArtifact {
    pub config: TrainConfig,
    pub class_count: usize,
    pub records: Vec<MetricsRecord>,
    pub model: Mlp,
    pub curriculum: Option<CurriculumState>,
}

impl RunArtifact {
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        metrics::write_metrics_csv(&self.records, self.class_count, out)
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("metrics CSV is ASCII")
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn summary(&self) -> Result<Summary> {
        metrics::summarize(&self.records)
    }
}

pub fn train(cfg: &TrainConfig, data: &SplitDataset) -> Result<RunArtifact> {
    train_with_curriculum(cfg, data, None)
}

/// Like [`train`], but flexible runs start from the given curriculum state
/// (for example one with pinned learning effects).
pub fn train_with_curriculum(
    cfg: &TrainConfig,
    data: &SplitDataset,
    curriculum: Option<CurriculumState>,
) -> Result<RunArtifact> {
    cfg.validate()?;
    if data.eval.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let classes = data.class_count();
    let spec = &cfg.spec;
    if spec.uses_unlabeled() && data.unlabeled_len() == 0 {
        return Err(Error::Config(format!("{} needs unlabeled data", spec.label())));
    }
    let mut curriculum = match (spec.flexible, curriculum) {
        (true, Some(state)) => {
            if state.unlabeled_count() != data.unlabeled_len() || state.class_count() != classes {
                return Err(Error::State("curriculum state does not match the dataset".into()));
            }
            Some(state)
        }
        (true, None) => Some(CurriculumState::new(
            data.unlabeled_len(),
            classes,
            cfg.curriculum_config(),
        )?),
        (false, Some(_)) => {
            return Err(Error::State("a curriculum state needs a flexible algorithm".into()))
        }
        (false, None) => None,
    };

    let data = data.standardized();
    let aug = Augmenter::unit(cfg.augment.clone(), data.feature_dim())?;
    let mut model = Mlp::new(&cfg.layer_sizes(data.feature_dim(), classes), cfg.seed)?;
    let mut opt = OptimizerState::new(model.params(), cfg.momentum, cfg.lr, cfg.iterations)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut sampler = BatchSampler::new();

    let mut records = Vec::new();
    let mut acc = Accumulator::default();
    for k in 0..cfg.iterations {
        let (lx, ly) = sampler.next_labeled(&data, cfg.batch_size, &mut rng)?;
        let sup = supervised_step(&model, &lx, &ly, &aug, &mut rng)?;
        let mut grads = model.backward(&sup.tape, &sup.grad_logits)?;
        let mut loss_u = 0.0;
        if spec.uses_unlabeled() {
            let idx = sampler.next_unlabeled_indices(
                data.unlabeled_len(),
                spec.mu * cfg.batch_size,
                &mut rng,
            )?;
            let ux = data.unlabeled.select_rows(&idx);
            let thresholds = match curriculum.as_mut() {
                Some(state) => Thresholds::Curriculum(state),
                None => Thresholds::Fixed(spec.tau),
            };
            let unsup = unsupervised_step(spec, &model, &ux, &idx, thresholds, &aug, &mut rng)?;
            let r = &unsup.result;
            loss_u = r.loss;
            acc.utilization += r.utilization;
            for ((&i, &m), pl) in idx.iter().zip(&r.mask).zip(&r.pseudo_labels) {
                if m {
                    acc.passed += 1;
                    if data.diagnostic_label(i) == Some(pl.class()) {
                        acc.correct += 1;
                    }
                }
            }
            let total = sup.loss + spec.lambda * r.loss + spec.class_balance_weight * r.class_balance;
            check_finite(total, k + 1, "loss")?;
            grads.axpy(1.0, &model.backward(&unsup.tape, &unsup.grad_logits)?)?;
        } else {
            check_finite(sup.loss, k + 1, "loss")?;
        }
        if !grads.is_finite() {
            return Err(Error::Divergence {
                iteration: k + 1,
                detail: "non-finite gradient".into(),
            });
        }
        acc.loss_s += sup.loss;
        acc.loss_u += loss_u;
        acc.steps += 1;

        let lr = opt.current_lr()?;
        model.params_mut().scale_weights(1.0 - lr * cfg.weight_decay);
        sgd_step(&mut model, &grads, &mut opt)?;
        model.ema_update(cfg.ema);
        if !model.params().is_finite() {
            return Err(Error::Divergence {
                iteration: k + 1,
                detail: "non-finite parameters after update".into(),
            });
        }

        let iteration = k + 1;
        if iteration % cfg.checkpoint_every == 0 || iteration == cfg.iterations {
            let thresholds = match &curriculum {
                Some(state) => state.thresholds().thresholds,
                None => vec![spec.tau; classes],
            };
            records.push(acc.flush(iteration, evaluate(&model, &data.eval, true)?, thresholds));
        }
    }

    Ok(RunArtifact {
        config: cfg.clone(),
        class_count: classes,
        records,
        model,
        curriculum,
    })
}

fn check_finite(value: f64, iteration: usize, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            iteration,
            detail: format!("non-finite {what} ({value})"),
        })
    }
}

/// Running sums between checkpoints.
#[derive(Default)]
struct Accumulator {
    steps: usize,
    loss_s: f64,
    loss_u: f64,
    utilization: f64,
    passed: usize,
    correct: usize,
}

impl Accumulator {
    fn flush(&mut self, iteration: usize, eval: metrics::Evaluation, thresholds: Vec<f64>) -> MetricsRecord {
        let n = self.steps.max(1) as f64;
        let record = MetricsRecord {
            iteration,
            eval,
            utilization: self.utilization / n,
            thresholds,
            loss_s: self.loss_s / n,
            loss_u: self.loss_u / n,
            pseudo_acc: if self.passed == 0 {
                f64::NAN
            } else {
                self.correct as f64 / self.passed as f64
            },
        };
        *self = Self::default();
        record
    }
}
