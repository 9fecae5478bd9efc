//! Training: label-smoothed KL objective, discriminative learning rates
//! with decoupled weight decay, gradient clipping, cosine warm-restart
//! scheduling, and the evaluation metrics.

mod metrics;
mod optim;
mod run;
mod schedule;

pub use metrics::{compute_metrics, evaluate, ClassMetrics, MetricsReport};
pub use optim::{
    clip_scale, global_grad_norm, train_step, AdamW, StepStats, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use run::{child_id_of, run_training, split_indices, Dataset, EpochRecord, TrainOutcome};
pub use schedule::{lr_at, lr_at_with_floor, ScheduleConfig};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::facegraph::{EmotionDistribution, NUM_CLASSES};
use crate::{Error, Result};

fn default_lr_backbone() -> f64 { 3e-6 }
fn default_lr_head() -> f64 { 1e-5 }
fn default_weight_decay() -> f64 { 5e-4 }
fn default_clip_norm() -> f64 { 1.0 }
fn default_smoothing() -> f64 { 0.1 }
fn default_epochs() -> usize { 50 }
fn default_batch_size() -> usize { 32 }
fn default_val_fraction() -> f64 { 0.2 }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub smoothing: f64,
    pub schedule: ScheduleConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of frames held out for validation (0 evaluates on the
    /// training set itself).
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_backbone: default_lr_backbone(),
            lr_head: default_lr_head(),
            weight_decay: default_weight_decay(),
            clip_norm: default_clip_norm(),
            smoothing: default_smoothing(),
            schedule: ScheduleConfig::default(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            seed: 0,
            val_fraction: default_val_fraction(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        for (name, v) in [
            ("lr_backbone", self.lr_backbone),
            ("lr_head", self.lr_head),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config(format!(
                "smoothing = {} outside [0, 1)",
                self.smoothing
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction = {} outside [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }

    /// Startup warnings: a schedule floor above a group's base rate makes
    /// the cosine term anneal upward for that group (applied literally;
    /// use the per-group floor overrides to change it).
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let floor_backbone = self.schedule.eta_min_backbone.unwrap_or(self.schedule.eta_min);
        let floor_head = self.schedule.eta_min_head.unwrap_or(self.schedule.eta_min);
        if floor_backbone > self.lr_backbone {
            out.push(format!(
                "schedule floor eta_min = {} EXCEEDS the backbone base rate {}; the backbone rate \
                 will anneal upward within each cycle (set schedule.eta_min_backbone to override)",
                floor_backbone, self.lr_backbone
            ));
        }
        if floor_head > self.lr_head {
            out.push(format!(
                "schedule floor eta_min = {} exceeds the head base rate {}; the head rate will \
                 anneal upward within each cycle (set schedule.eta_min_head to override)",
                floor_head, self.lr_head
            ));
        }
        out
    }

    pub fn lr_backbone_at(&self, epoch: f64) -> f64 {
        let floor = self.schedule.eta_min_backbone.unwrap_or(self.schedule.eta_min);
        lr_at_with_floor(epoch, self.lr_backbone, &self.schedule, floor)
    }

    pub fn lr_head_at(&self, epoch: f64) -> f64 {
        let floor = self.schedule.eta_min_head.unwrap_or(self.schedule.eta_min);
        lr_at_with_floor(epoch, self.lr_head, &self.schedule, floor)
    }
}

/// A label-smoothed training target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedTarget {
    y: EmotionDistribution,
}

impl SmoothedTarget {
    pub fn dist(&self) -> &EmotionDistribution {
        &self.y
    }
}

/// Convex mix with the uniform distribution:
/// (1 - eps) * y_soft + eps / 7.
pub fn smooth_targets(y_soft: &EmotionDistribution, epsilon: f64) -> Result<SmoothedTarget> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Config(format!("smoothing = {epsilon} outside [0, 1)")));
    }
    let u = epsilon / NUM_CLASSES as f64;
    let mut p = [0.0; NUM_CLASSES];
    for (i, v) in y_soft.as_array().iter().enumerate() {
        p[i] = (1.0 - epsilon) * v + u;
    }
    Ok(SmoothedTarget {
        y: EmotionDistribution::new(p)
            .map_err(|e| Error::Numerical(format!("smoothing produced invalid target: {e}")))?,
    })
}

/// Batch-mean KL divergence sum_i y_i ln(y_i / s_i) between smoothed
/// targets and the softmax of the logits, with 0 ln 0 = 0.
pub fn kl_loss(logits: &Array2<f64>, targets: &[SmoothedTarget]) -> Result<f64> {
    kl_loss_with_grad(logits, targets).map(|(loss, _)| loss)
}

/// KL loss plus its analytic gradient w.r.t. the logits:
/// d loss / d z = (softmax(z) - y) / batch.
pub fn kl_loss_with_grad(
    logits: &Array2<f64>,
    targets: &[SmoothedTarget],
) -> Result<(f64, Array2<f64>)> {
    let b = logits.nrows();
    if b != targets.len() {
        return Err(Error::Shape(format!(
            "{b} logit rows vs {} targets",
            targets.len()
        )));
    }
    if logits.ncols() != NUM_CLASSES {
        return Err(Error::Shape(format!(
            "logit width {} != {NUM_CLASSES}",
            logits.ncols()
        )));
    }
    if b == 0 {
        return Err(Error::EmptyInput("empty batch in kl_loss".into()));
    }
    for (i, row) in logits.rows().into_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite logits in batch row {i}"
            )));
        }
    }

    let mut total = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for (i, row) in logits.rows().into_iter().enumerate() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let y = targets[i].dist().as_array();
        for (j, &z) in row.iter().enumerate() {
            let log_s = z - lse;
            let s = log_s.exp();
            if y[j] > 0.0 {
                total += y[j] * (y[j].ln() - log_s);
            }
            grad[[i, j]] = (s - y[j]) / b as f64;
        }
    }
    Ok((total / b as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facegraph::EmotionClass;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_target(rng: &mut ChaCha8Rng) -> SmoothedTarget {
        let mut p = [0.0f64; 7];
        let mut s = 0.0;
        for v in p.iter_mut() {
            *v = rng.random_range(0.01..1.0);
            s += *v;
        }
        for v in p.iter_mut() {
            *v /= s;
        }
        SmoothedTarget { y: EmotionDistribution::new(p).unwrap() }
    }

    #[test]
    fn smooth_targets_identity_one_hot_and_uniform_cases() {
        let hot = EmotionDistribution::one_hot(EmotionClass::Happy);
        let t = smooth_targets(&hot, 0.0).unwrap();
        assert_eq!(t.dist(), &hot);

        let t = smooth_targets(&hot, 0.1).unwrap();
        assert_abs_diff_eq!(t.dist().get(EmotionClass::Happy), 0.9 + 0.1 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.dist().get(EmotionClass::Sad), 0.1 / 7.0, epsilon = 1e-12);

        let u = EmotionDistribution::uniform();
        let t = smooth_targets(&u, 0.37).unwrap();
        for &v in t.dist().as_array() {
            assert_abs_diff_eq!(v, 1.0 / 7.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn kl_zero_when_prediction_equals_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_target(&mut rng);
        // Logits = ln target realize the target exactly after softmax.
        let logits = Array2::from_shape_fn((1, 7), |(_, j)| t.dist().as_array()[j].ln());
        let loss = kl_loss(&logits, &[t]).unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn kl_one_hot_vs_uniform_is_ln_seven() {
        let hot = SmoothedTarget { y: EmotionDistribution::one_hot(EmotionClass::Fear) };
        let logits = Array2::zeros((1, 7));
        let loss = kl_loss(&logits, &[hot]).unwrap();
        assert_abs_diff_eq!(loss, (7.0f64).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 1.9459101490553132, epsilon = 1e-12);
    }

    #[test]
    fn kl_matches_independent_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let targets: Vec<SmoothedTarget> = (0..4).map(|_| random_target(&mut rng)).collect();
            let logits = Array2::from_shape_fn((4, 7), |_| rng.random_range(-3.0..3.0));
            let got = kl_loss(&logits, &targets).unwrap();

            // Oracle: plain softmax then plain sum.
            let mut want = 0.0;
            for (i, row) in logits.rows().into_iter().enumerate() {
                let exps: Vec<f64> = row.iter().map(|v| v.exp()).collect();
                let z: f64 = exps.iter().sum();
                for (j, &e) in exps.iter().enumerate() {
                    let y = targets[i].dist().as_array()[j];
                    if y > 0.0 {
                        want += y * (y / (e / z)).ln();
                    }
                }
            }
            want /= 4.0;
            assert_abs_diff_eq!(got, want, epsilon = 1e-9);
            assert!(got >= -1e-12);
        }
    }

    #[test]
    fn kl_gradient_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let targets: Vec<SmoothedTarget> = (0..2).map(|_| random_target(&mut rng)).collect();
            let logits = Array2::from_shape_fn((2, 7), |_| rng.random_range(-2.0..2.0));
            let (_, grad) = kl_loss_with_grad(&logits, &targets).unwrap();
            let eps = 1e-4;
            for idx in 0..logits.len() {
                let (i, j) = (idx / 7, idx % 7);
                let mut lp = logits.clone();
                lp[[i, j]] += eps;
                let mut lm = logits.clone();
                lm[[i, j]] -= eps;
                let want = (kl_loss(&lp, &targets).unwrap() - kl_loss(&lm, &targets).unwrap())
                    / (2.0 * eps);
                let denom = want.abs().max(1e-8);
                assert!(
                    ((grad[[i, j]] - want) / denom).abs() < 1e-4,
                    "grad {} vs fd {}",
                    grad[[i, j]],
                    want
                );
            }
        }
    }

    #[test]
    fn kl_rejects_non_finite_logits_with_row_index() {
        let mut logits = Array2::zeros((3, 7));
        logits[[2, 4]] = f64::NAN;
        let targets: Vec<SmoothedTarget> =
            (0..3).map(|_| SmoothedTarget { y: EmotionDistribution::uniform() }).collect();
        let err = kl_loss(&logits, &targets).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn config_warnings_fire_for_backbone_floor() {
        let cfg = TrainConfig::default();
        // Default eta_min 1e-5 exceeds the backbone base 3e-6.
        let warnings = cfg.warnings();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("backbone"));

        let silenced = TrainConfig {
            schedule: ScheduleConfig {
                eta_min_backbone: Some(1e-7),
                ..ScheduleConfig::default()
            },
            ..TrainConfig::default()
        };
        assert!(silenced.warnings().is_empty());
    }
}
