//! Curriculum pseudo labeling: per-class flexible confidence thresholds.
//!
//! Every unlabeled sample has a cache slot holding the last class it was
//! confidently (strictly above the fixed threshold τ) predicted as, or
//! nothing if it has never been. The learning effect σ(c) of a class is the
//! number of cache slots holding c. Effects are normalized to β(c) ∈ [0, 1],
//! either by the largest effect, or during warm-up by the number of samples
//! that have never been confidently predicted. The flexible threshold of a
//! class is T(c) = M(β(c))·τ for a monotone mapping M with M(0)=0, M(1)=1.
//!
//! Cache updates always compare against τ itself; only the loss mask uses
//! the flexible thresholds.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Shape of the curve that turns a normalized effect into a threshold scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mapping {
    /// ln(x+1)/ln 2
    Concave,
    /// x
    Linear,
    /// x/(2−x)
    #[default]
    Convex,
}

impl Mapping {
    pub const ALL: [Mapping; 3] = [Mapping::Concave, Mapping::Linear, Mapping::Convex];

    pub fn name(self) -> &'static str {
        match self {
            Mapping::Concave => "concave",
            Mapping::Linear => "linear",
            Mapping::Convex => "convex",
        }
    }
}

impl fmt::Display for Mapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mapping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concave" => Ok(Mapping::Concave),
            "linear" => Ok(Mapping::Linear),
            "convex" => Ok(Mapping::Convex),
            other => Err(Error::Config(format!(
                "unknown mapping '{other}' (expected concave, linear or convex)"
            ))),
        }
    }
}

pub fn map_effect(beta: f64, mapping: Mapping) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Argument(format!("normalized effect {beta} outside [0, 1]")));
    }
    Ok(match mapping {
        Mapping::Concave => (beta + 1.0).ln() / std::f64::consts::LN_2,
        Mapping::Linear => beta,
        Mapping::Convex => beta / (2.0 - beta),
    })
}

/// A weak-branch prediction for one unlabeled sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Confidence {
    pub index: usize,
    pub confidence: f64,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdVector {
    pub thresholds: Vec<f64>,
    pub effects: Vec<f64>,
    pub warmup_active: bool,
}

impl ThresholdVector {
    /// Fixed threshold τ for every class.
    pub fn uniform(tau: f64, class_count: usize) -> Self {
        Self {
            thresholds: vec![tau; class_count],
            effects: vec![1.0; class_count],
            warmup_active: false,
        }
    }

    /// Strict comparison: confidence must exceed the class threshold.
    #[inline]
    pub fn admits(&self, confidence: f64, class: usize) -> bool {
        confidence > self.thresholds[class]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumConfig {
    pub tau: f64,
    pub mapping: Mapping,
    pub warmup: bool,
    /// Lower limit on every flexible threshold; 0 disables it.
    pub threshold_floor: f64,
}

impl CurriculumConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            mapping: Mapping::Convex,
            warmup: true,
            threshold_floor: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CurriculumState {
    cfg: CurriculumConfig,
    cache: Vec<Option<u32>>,
    counts: Vec<u64>,
    unused: u64,
    pinned: Option<Vec<f64>>,
}

impl CurriculumState {
    pub fn new(unlabeled_count: usize, class_count: usize, cfg: CurriculumConfig) -> Result<Self> {
        if !(cfg.tau > 0.0 && cfg.tau <= 1.0) {
            return Err(Error::Config(format!("tau {} must lie in (0, 1]", cfg.tau)));
        }
        if !(0.0..=cfg.tau).contains(&cfg.threshold_floor) {
            return Err(Error::Config(format!(
                "threshold_floor {} must lie in [0, tau]",
                cfg.threshold_floor
            )));
        }
        if class_count == 0 || class_count > u32::MAX as usize {
            return Err(Error::Config(format!("invalid class count {class_count}")));
        }
        Ok(Self {
            cfg,
            cache: vec![None; unlabeled_count],
            counts: vec![0; class_count],
            unused: unlabeled_count as u64,
            pinned: None,
        })
    }

    pub fn config(&self) -> &CurriculumConfig {
        &self.cfg
    }

    pub fn tau(&self) -> f64 {
        self.cfg.tau
    }

    pub fn class_count(&self) -> usize {
        self.counts.len()
    }

    pub fn unlabeled_count(&self) -> usize {
        self.cache.len()
    }

    pub fn unused_count(&self) -> u64 {
        self.unused
    }

    pub fn cached_class(&self, index: usize) -> Option<usize> {
        self.cache.get(index).copied().flatten().map(|c| c as usize)
    }

    pub fn cache(&self) -> impl Iterator<Item = Option<usize>> + '_ {
        self.cache.iter().map(|c| c.map(|c| c as usize))
    }

    /// Freezes the normalized effects at `effects` (one per class). The cache
    /// keeps updating but no longer influences the thresholds.
    pub fn pin_effects(&mut self, effects: Vec<f64>) -> Result<()> {
        if effects.len() != self.class_count() {
            return Err(Error::Argument(format!(
                "{} pinned effects for {} classes",
                effects.len(),
                self.class_count()
            )));
        }
        if effects.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Argument("pinned effects must lie in [0, 1]".into()));
        }
        self.pinned = Some(effects);
        Ok(())
    }

    pub fn is_pinned(&self) -> bool {
        self.pinned.is_some()
    }

    /// Updates the cache for every prediction strictly above τ; others leave
    /// their slot untouched. All indices are validated before any update.
    pub fn record_predictions(&mut self, batch: &[Confidence]) -> Result<()> {
        let n = self.cache.len();
        let c = self.class_count();
        for p in batch {
            if p.index >= n {
                return Err(Error::Argument(format!(
                    "unlabeled index {} out of range (N = {n})",
                    p.index
                )));
            }
            if p.class >= c {
                return Err(Error::Argument(format!(
                    "class {} out of range (C = {c})",
                    p.class
                )));
            }
        }
        for p in batch {
            if p.confidence > self.cfg.tau {
                let slot = &mut self.cache[p.index];
                match slot.replace(p.class as u32) {
                    Some(prev) => self.counts[prev as usize] -= 1,
                    None => self.unused -= 1,
                }
                self.counts[p.class] += 1;
            }
        }
        Ok(())
    }

    /// Current σ, maintained incrementally.
    pub fn learning_effects(&self) -> &[u64] {
        &self.counts
    }

    /// β and whether the warm-up denominator is in force.
    pub fn normalized_effects(&self) -> (Vec<f64>, bool) {
        if let Some(pinned) = &self.pinned {
            return (pinned.clone(), false);
        }
        let max = self.counts.iter().copied().max().unwrap_or(0);
        let warmup_active = self.cfg.warmup && max < self.unused;
        let denom = if warmup_active { self.unused } else { max };
        let beta = if denom == 0 {
            vec![0.0; self.counts.len()]
        } else {
            self.counts
                .iter()
                .map(|&s| s as f64 / denom as f64)
                .collect()
        };
        (beta, warmup_active)
    }

    /// Flexible thresholds, computed fresh from the cache.
    pub fn thresholds(&self) -> ThresholdVector {
        let (effects, warmup_active) = self.normalized_effects();
        let thresholds = effects
            .iter()
            .map(|&b| {
                let scaled = map_effect(b, self.cfg.mapping).expect("β is normalized") * self.cfg.tau;
                scaled.max(self.cfg.threshold_floor)
            })
            .collect();
        ThresholdVector {
            thresholds,
            effects,
            warmup_active,
        }
    }

    /// Pass/fail per `(confidence, class)` against the flexible thresholds.
    pub fn mask(&self, batch: &[(f64, usize)]) -> Result<Vec<bool>> {
        let t = self.thresholds();
        batch
            .iter()
            .map(|&(conf, class)| {
                if class >= self.class_count() {
                    Err(Error::Argument(format!("class {class} out of range")))
                } else {
                    Ok(t.admits(conf, class))
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(n: usize, c: usize, tau: f64, warmup: bool, mapping: Mapping) -> CurriculumState {
        let mut cfg = CurriculumConfig::new(tau);
        cfg.warmup = warmup;
        cfg.mapping = mapping;
        CurriculumState::new(n, c, cfg).unwrap()
    }

    fn conf(index: usize, confidence: f64, class: usize) -> Confidence {
        Confidence {
            index,
            confidence,
            class,
        }
    }

    fn recount(s: &CurriculumState) -> (Vec<u64>, u64) {
        let mut counts = vec![0; s.class_count()];
        let mut unused = 0;
        for c in s.cache() {
            match c {
                Some(c) => counts[c] += 1,
                None => unused += 1,
            }
        }
        (counts, unused)
    }

    #[test]
    fn confident_prediction_is_recorded() {
        let mut s = state(10, 4, 0.95, true, Mapping::Convex);
        s.record_predictions(&[conf(5, 0.99, 2)]).unwrap();
        assert_eq!(s.learning_effects(), &[0, 0, 1, 0]);
        assert_eq!(s.unused_count(), 9);
        assert_eq!(s.cached_class(5), Some(2));
    }

    #[test]
    fn confidence_at_tau_is_ignored() {
        let mut s = state(10, 4, 0.95, true, Mapping::Convex);
        s.record_predictions(&[conf(5, 0.95, 2)]).unwrap();
        assert_eq!(s.learning_effects(), &[0, 0, 0, 0]);
        assert_eq!(s.unused_count(), 10);
    }

    #[test]
    fn overwrite_moves_the_count() {
        let mut s = state(10, 4, 0.95, true, Mapping::Convex);
        s.record_predictions(&[conf(5, 0.99, 1)]).unwrap();
        s.record_predictions(&[conf(5, 0.97, 3)]).unwrap();
        assert_eq!(s.learning_effects(), &[0, 0, 0, 1]);
        assert_eq!(s.unused_count(), 9);
    }

    #[test]
    fn bad_index_rejected_without_partial_update() {
        let mut s = state(3, 2, 0.9, true, Mapping::Linear);
        let err = s.record_predictions(&[conf(0, 0.99, 0), conf(3, 0.99, 0)]);
        assert!(matches!(err, Err(Error::Argument(_))));
        assert_eq!(s.unused_count(), 3);
        assert!(s.record_predictions(&[conf(0, 0.99, 2)]).is_err());
    }

    #[test]
    fn recount_example() {
        let mut s = state(10, 3, 0.95, true, Mapping::Linear);
        let preds: Vec<_> = [0, 0, 0, 1, 2]
            .iter()
            .enumerate()
            .map(|(i, &c)| conf(i, 0.99, c))
            .collect();
        s.record_predictions(&preds).unwrap();
        assert_eq!(s.learning_effects(), &[3, 1, 1]);
        assert_eq!(s.unused_count(), 5);

        let (beta, warm) = s.normalized_effects();
        assert!(warm);
        assert_eq!(beta, vec![0.6, 0.2, 0.2]);
    }

    #[test]
    fn all_into_one_class() {
        let n = 25;
        let mut s = state(n, 3, 0.95, true, Mapping::Linear);
        let preds: Vec<_> = (0..n).map(|i| conf(i, 0.99, 0)).collect();
        s.record_predictions(&preds).unwrap();
        assert_eq!(s.learning_effects(), &[n as u64, 0, 0]);
        assert_eq!(s.unused_count(), 0);
    }

    #[test]
    fn normalization_without_unused() {
        let mut s = state(10, 3, 0.95, true, Mapping::Linear);
        let classes = [0, 0, 0, 0, 0, 1, 1, 1, 2, 2];
        let preds: Vec<_> = classes.iter().enumerate().map(|(i, &c)| conf(i, 0.99, c)).collect();
        s.record_predictions(&preds).unwrap();
        let (beta, warm) = s.normalized_effects();
        assert!(!warm);
        assert_eq!(beta, vec![1.0, 0.6, 0.4]);
        let t = s.thresholds();
        let expect = [0.95, 0.57, 0.38];
        for (a, b) in t.thresholds.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fresh_state_is_open() {
        for warmup in [true, false] {
            let s = state(100, 5, 0.95, warmup, Mapping::Convex);
            let (beta, _) = s.normalized_effects();
            assert!(beta.iter().all(|&b| b == 0.0));
            assert!(s.thresholds().thresholds.iter().all(|&t| t == 0.0));
            let mask = s.mask(&[(1e-300, 0), (0.2, 4), (1.0, 2)]).unwrap();
            assert!(mask.iter().all(|&m| m));
        }
    }

    #[test]
    fn mapping_values() {
        for m in Mapping::ALL {
            assert_eq!(map_effect(1.0, m).unwrap(), 1.0);
            assert_eq!(map_effect(0.0, m).unwrap(), 0.0);
        }
        assert_eq!(map_effect(0.5, Mapping::Convex).unwrap(), 1.0 / 3.0);
        assert!((map_effect(0.5, Mapping::Concave).unwrap() - 0.58496).abs() < 1e-5);
        assert!(map_effect(1.01, Mapping::Linear).is_err());
        assert!(map_effect(-0.01, Mapping::Convex).is_err());
    }

    #[test]
    fn convex_threshold_example() {
        let mut s = state(10, 2, 0.95, false, Mapping::Convex);
        let classes = [0, 0, 0, 0, 0, 1, 1, 1];
        let preds: Vec<_> = classes.iter().enumerate().map(|(i, &c)| conf(i, 0.99, c)).collect();
        s.record_predictions(&preds).unwrap();
        let t = s.thresholds();
        assert_eq!(t.effects, vec![1.0, 0.6]);
        assert_eq!(t.thresholds[0], 0.95);
        assert!((t.thresholds[1] - 0.95 * 0.6 / 1.4).abs() < 1e-12);
        assert!((t.thresholds[1] - 0.40714).abs() < 1e-5);
    }

    #[test]
    fn mask_is_strict() {
        let mut s = state(4, 3, 0.95, false, Mapping::Linear);
        s.pin_effects(vec![1.0, 0.40 / 0.95, 0.5 / 0.95]).unwrap();
        let t = s.thresholds();
        assert!(t.admits(0.97, 2));
        let mask = s.mask(&[(0.97, 2), (t.thresholds[1], 1)]).unwrap();
        assert_eq!(mask, vec![true, false]);
        assert!(s.mask(&[(0.5, 3)]).is_err());
    }

    #[test]
    fn overwrite_can_lower_a_threshold() {
        let mut s = state(6, 2, 0.95, false, Mapping::Linear);
        let preds: Vec<_> = [0, 0, 1, 1, 1].iter().enumerate().map(|(i, &c)| conf(i, 0.99, c)).collect();
        s.record_predictions(&preds).unwrap();
        let before = s.thresholds().thresholds[0];
        s.record_predictions(&[conf(0, 0.99, 1)]).unwrap();
        let after = s.thresholds().thresholds[0];
        assert!(after < before, "{before} -> {after}");
    }

    #[test]
    fn floor_limits_thresholds() {
        let mut cfg = CurriculumConfig::new(0.95);
        cfg.threshold_floor = 0.5;
        let s = CurriculumState::new(10, 2, cfg).unwrap();
        assert_eq!(s.thresholds().thresholds, vec![0.5, 0.5]);
        let mut bad = CurriculumConfig::new(0.95);
        bad.threshold_floor = 0.96;
        assert!(CurriculumState::new(10, 2, bad).is_err());
        assert!(CurriculumState::new(10, 2, CurriculumConfig::new(0.0)).is_err());
    }

    #[test]
    fn pinned_unit_effects_reproduce_fixed_threshold() {
        let mut s = state(5, 3, 0.95, false, Mapping::Linear);
        s.pin_effects(vec![1.0; 3]).unwrap();
        assert_eq!(s.thresholds(), ThresholdVector::uniform(0.95, 3));
        s.record_predictions(&[conf(1, 0.99, 2)]).unwrap();
        assert_eq!(s.thresholds(), ThresholdVector::uniform(0.95, 3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn counters_match_recount(
            n in 1usize..40,
            c in 1usize..6,
            ops in prop::collection::vec(
                prop::collection::vec((0usize..1000, 0.0f64..=1.0, 0usize..1000), 0..12),
                0..30,
            ),
            warmup in any::<bool>(),
        ) {
            let mut s = state(n, c, 0.7, warmup, Mapping::Convex);
            for batch in ops {
                let batch: Vec<_> = batch.into_iter().map(|(i, p, k)| conf(i % n, p, k % c)).collect();
                s.record_predictions(&batch).unwrap();
                let (counts, unused) = recount(&s);
                prop_assert_eq!(s.learning_effects(), counts.as_slice());
                prop_assert_eq!(s.unused_count(), unused);
                prop_assert_eq!(counts.iter().sum::<u64>() + unused, n as u64);

                let t = s.thresholds();
                for (&b, &th) in t.effects.iter().zip(&t.thresholds) {
                    prop_assert!((0.0..=1.0).contains(&b));
                    prop_assert!((0.0..=0.7).contains(&th));
                }
                if !t.warmup_active && counts.iter().any(|&x| x > 0) {
                    let best = t.effects.iter().cloned().fold(0.0, f64::max);
                    prop_assert_eq!(best, 1.0);
                }
            }
        }

        #[test]
        fn mapping_order(x in 1e-9f64..(1.0 - 1e-9)) {
            let cv = map_effect(x, Mapping::Convex).unwrap();
            let li = map_effect(x, Mapping::Linear).unwrap();
            let cc = map_effect(x, Mapping::Concave).unwrap();
            prop_assert!(cv < li && li < cc);
        }

        #[test]
        fn warmup_effect_grows_with_count(extra in 1usize..20) {
            // No overwrites: every prediction targets a fresh slot.
            let mut s = state(200, 3, 0.9, true, Mapping::Linear);
            let first: Vec<_> = (0..5).map(|i| conf(i, 0.99, 0)).collect();
            s.record_predictions(&first).unwrap();
            let (b0, w0) = s.normalized_effects();
            let more: Vec<_> = (5..5 + extra).map(|i| conf(i, 0.99, 0)).collect();
            s.record_predictions(&more).unwrap();
            let (b1, w1) = s.normalized_effects();
            prop_assert!(w0 && w1);
            prop_assert!(b1[0] >= b0[0]);
        }
    }
}
