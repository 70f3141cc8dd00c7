//! Stochastic weak and strong augmentations for feature vectors.
//!
//! Weak augmentation adds small gaussian jitter. Strong augmentation applies,
//! in this fixed order: larger gaussian jitter, per-feature zeroing, and a
//! global multiplicative scale. Noise magnitudes are expressed in units of
//! each feature's standard deviation (see [`Augmenter::new`]).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numkit::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub weak_noise_sigma: f64,
    pub strong_noise_sigma: f64,
    pub strong_dropout_prob: f64,
    pub strong_scale_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            weak_noise_sigma: 0.05,
            strong_noise_sigma: 0.25,
            strong_dropout_prob: 0.2,
            strong_scale_range: (0.7, 1.3),
        }
    }
}

impl AugmentConfig {
    /// Every distortion disabled.
    pub fn identity() -> Self {
        Self {
            weak_noise_sigma: 0.0,
            strong_noise_sigma: 0.0,
            strong_dropout_prob: 0.0,
            strong_scale_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.weak_noise_sigma) || !finite_nonneg(self.strong_noise_sigma) {
            return Err(Error::Config(
                "augmentation noise sigmas must be finite and non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.strong_dropout_prob) {
            return Err(Error::Config(format!(
                "strong_dropout_prob {} must lie in [0, 1)",
                self.strong_dropout_prob
            )));
        }
        let (lo, hi) = self.strong_scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!(
                "strong_scale_range [{lo}, {hi}] must be positive and ordered"
            )));
        }
        Ok(())
    }
}

/// Weak augmentation with unit feature scale.
pub fn weak<R: Rng + ?Sized>(x: &[f64], cfg: &AugmentConfig, rng: &mut R) -> Vec<f64> {
    let mut out = x.to_vec();
    weak_in_place(&mut out, cfg, None, rng);
    out
}

/// Strong augmentation with unit feature scale.
pub fn strong<R: Rng + ?Sized>(x: &[f64], cfg: &AugmentConfig, rng: &mut R) -> Vec<f64> {
    let mut out = x.to_vec();
    strong_in_place(&mut out, cfg, None, rng);
    out
}

fn weak_in_place<R: Rng + ?Sized>(
    x: &mut [f64],
    cfg: &AugmentConfig,
    scale: Option<&[f64]>,
    rng: &mut R,
) {
    for (j, v) in x.iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        let s = scale.map_or(1.0, |s| s[j]);
        *v += cfg.weak_noise_sigma * s * z;
    }
}

fn strong_in_place<R: Rng + ?Sized>(
    x: &mut [f64],
    cfg: &AugmentConfig,
    scale: Option<&[f64]>,
    rng: &mut R,
) {
    for (j, v) in x.iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        let s = scale.map_or(1.0, |s| s[j]);
        *v += cfg.strong_noise_sigma * s * z;
    }
    for v in x.iter_mut() {
        if rng.random::<f64>() < cfg.strong_dropout_prob {
            *v = 0.0;
        }
    }
    let (lo, hi) = cfg.strong_scale_range;
    let g = rng.random_range(lo..=hi);
    x.iter_mut().for_each(|v| *v *= g);
}

/// Augmentation bound to a per-feature noise scale (typically the feature
/// standard deviations of the training pool).
#[derive(Clone, Debug)]
pub struct Augmenter {
    cfg: AugmentConfig,
    feature_scale: Vec<f64>,
}

impl Augmenter {
    pub fn new(cfg: AugmentConfig, feature_scale: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        if feature_scale.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("feature scales must be finite and non-negative".into()));
        }
        Ok(Self { cfg, feature_scale })
    }

    pub fn unit(cfg: AugmentConfig, dim: usize) -> Result<Self> {
        Self::new(cfg, vec![1.0; dim])
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.cfg
    }

    fn check(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.feature_scale.len() {
            return Err(Error::Shape(format!(
                "augmenter built for {} features, batch has {}",
                self.feature_scale.len(),
                batch.cols()
            )));
        }
        Ok(())
    }

    pub fn weak_batch<R: Rng + ?Sized>(&self, batch: &Matrix, rng: &mut R) -> Result<Matrix> {
        self.check(batch)?;
        let mut out = batch.clone();
        for r in 0..out.rows() {
            weak_in_place(out.row_mut(r), &self.cfg, Some(&self.feature_scale), rng);
        }
        Ok(out)
    }

    pub fn strong_batch<R: Rng + ?Sized>(&self, batch: &Matrix, rng: &mut R) -> Result<Matrix> {
        self.check(batch)?;
        let mut out = batch.clone();
        for r in 0..out.rows() {
            strong_in_place(out.row_mut(r), &self.cfg, Some(&self.feature_scale), rng);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_noise_weak_is_identity() {
        let cfg = AugmentConfig {
            weak_noise_sigma: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = [0.5, -3.0, 2.25];
        assert_eq!(weak(&x, &cfg, &mut rng), x);
    }

    #[test]
    fn weak_noise_std_matches_sigma() {
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let diffs: Vec<f64> = (0..n).map(|_| weak(&[1.5], &cfg, &mut rng)[0] - 1.5).collect();
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std = var.sqrt();
        assert!((std - 0.05).abs() < 0.2 * 0.05, "std {std}");
    }

    #[test]
    fn independent_draws_differ() {
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = [1.0, 2.0];
        assert_ne!(weak(&x, &cfg, &mut rng), weak(&x, &cfg, &mut rng));
    }

    #[test]
    fn degenerate_strong_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = [0.3, -0.7, 9.0];
        assert_eq!(strong(&x, &AugmentConfig::identity(), &mut rng), x);
    }

    #[test]
    fn full_dropout_rejected() {
        let cfg = AugmentConfig {
            strong_dropout_prob: 1.0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(Augmenter::unit(cfg, 2).is_err());
        let bad_range = AugmentConfig {
            strong_scale_range: (1.3, 0.7),
            ..Default::default()
        };
        assert!(bad_range.validate().is_err());
    }

    #[test]
    fn dropout_rate_near_configured() {
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Inputs far from zero so only dropout can produce an exact zero.
        let x = vec![100.0; 100];
        let zeros: usize = (0..100)
            .map(|_| strong(&x, &cfg, &mut rng).iter().filter(|&&v| v == 0.0).count())
            .sum();
        let rate = zeros as f64 / 10_000.0;
        assert!((rate - 0.2).abs() <= 0.02, "rate {rate}");
    }

    #[test]
    fn deterministic_for_seed() {
        let cfg = AugmentConfig::default();
        let x = [0.1, 0.2, 0.3];
        let a = strong(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let b = strong(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn strong_displaces_more_than_weak() {
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for x in [[0.0, 0.0], [1.0, -1.0], [3.0, 0.5]] {
            let msd = |f: &dyn Fn(&mut ChaCha8Rng) -> Vec<f64>, rng: &mut ChaCha8Rng| {
                (0..4000)
                    .map(|_| {
                        f(rng).iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                    })
                    .sum::<f64>()
                    / 4000.0
            };
            let w = msd(&|r| weak(&x, &cfg, r), &mut rng);
            let s = msd(&|r| strong(&x, &cfg, r), &mut rng);
            assert!(s >= w, "x={x:?} weak {w} strong {s}");
        }
    }

    #[test]
    fn feature_scale_applies() {
        let cfg = AugmentConfig {
            weak_noise_sigma: 1.0,
            ..Default::default()
        };
        let aug = Augmenter::new(cfg, vec![0.0, 1.0]).unwrap();
        let batch = Matrix::from_rows(&[[5.0, 5.0]]).unwrap();
        let out = aug.weak_batch(&batch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.get(0, 0), 5.0);
        assert_ne!(out.get(0, 1), 5.0);
        assert!(aug.weak_batch(&Matrix::zeros(1, 3), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
