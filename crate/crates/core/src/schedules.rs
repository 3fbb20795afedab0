//! Annealing scales for the masked-weight gradient factor α and the
//! learning-rate schedule.
//!
//! All scales are computed in `f64` and lie in `[0, 1]`. Epochs are
//! 0-based; `total` is the number of epochs the decay spans.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::sigmoid;

pub const DEFAULT_SIGMOID_LOW: f64 = -6.0;
pub const DEFAULT_SIGMOID_HIGH: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealKind {
    Fixed,
    Linear,
    Cosine,
    Sigmoid,
    SigmoidCosine,
    Exponential,
}

/// Decay rule for α together with its constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSchedule {
    pub kind: AnnealKind,
    /// Lower logit of the sigmoid ramp.
    #[serde(default = "default_l0")]
    pub l0: f64,
    /// Upper logit of the sigmoid ramp.
    #[serde(default = "default_l1")]
    pub l1: f64,
    /// Rate of the exponential decay.
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_l0() -> f64 {
    DEFAULT_SIGMOID_LOW
}
fn default_l1() -> f64 {
    DEFAULT_SIGMOID_HIGH
}
fn default_beta() -> f64 {
    1.0
}

impl AnnealSchedule {
    pub fn new(kind: AnnealKind) -> Self {
        Self {
            kind,
            l0: DEFAULT_SIGMOID_LOW,
            l1: DEFAULT_SIGMOID_HIGH,
            beta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l0 < self.l1) {
            return Err(Error::invalid("l0", "sigmoid logits need l0 < l1"));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta", "must be positive and finite"));
        }
        Ok(())
    }

    /// Scale applied to α0 at `epoch` of `total`.
    pub fn scale(&self, epoch: usize, total: usize) -> Result<f64> {
        check_range(epoch, total)?;
        match self.kind {
            AnnealKind::Fixed => Ok(1.0),
            AnnealKind::Linear => linear_decay(epoch, total),
            AnnealKind::Cosine => cosine_decay(epoch, total),
            AnnealKind::Sigmoid => sigmoid_decay(epoch, total, self.l0, self.l1),
            AnnealKind::SigmoidCosine => sigmoid_cosine_decay(epoch, total, self.l0, self.l1),
            AnnealKind::Exponential => exponential_decay(epoch as f64, self.beta),
        }
    }
}

fn check_range(i: usize, total: usize) -> Result<()> {
    if total == 0 {
        return Err(Error::invalid("total", "must be at least 1"));
    }
    if i > total {
        return Err(Error::invalid(
            "epoch",
            format!("epoch {i} exceeds total {total}"),
        ));
    }
    Ok(())
}

/// `1 - i/T`.
pub fn linear_decay(i: usize, total: usize) -> Result<f64> {
    check_range(i, total)?;
    Ok(1.0 - i as f64 / total as f64)
}

/// `(1 + cos(π·i/T)) / 2`.
pub fn cosine_decay(i: usize, total: usize) -> Result<f64> {
    check_range(i, total)?;
    let c = (1.0 + (PI * i as f64 / total as f64).cos()) / 2.0;
    Ok(c.clamp(0.0, 1.0))
}

/// `1 - σ(L0 + (L1 - L0)·i/T)`.
pub fn sigmoid_decay(i: usize, total: usize, l0: f64, l1: f64) -> Result<f64> {
    check_range(i, total)?;
    if !(l0 < l1) {
        return Err(Error::invalid("l0", "sigmoid logits need l0 < l1"));
    }
    let logit = l0 + (l1 - l0) * i as f64 / total as f64;
    // 1 - σ(x) == σ(-x), which keeps precision near 0.
    Ok(sigmoid(-logit))
}

/// Pointwise maximum of the sigmoid and cosine scales.
pub fn sigmoid_cosine_decay(i: usize, total: usize, l0: f64, l1: f64) -> Result<f64> {
    let s = sigmoid_decay(i, total, l0, l1)?;
    let c = cosine_decay(i, total)?;
    Ok(s.max(c))
}

/// `exp(-β·t)`.
pub fn exponential_decay(t: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::invalid("beta", "must be positive and finite"));
    }
    if !(t >= 0.0) {
        return Err(Error::invalid("t", "must be non-negative"));
    }
    Ok((-beta * t).exp())
}

/// α for an epoch: `alpha0 × scale(epoch)`, and exactly `0.0` from
/// `zero_from` on.
pub fn alpha_at_epoch(
    alpha0: f64,
    schedule: &AnnealSchedule,
    epoch: usize,
    total: usize,
    zero_from: Option<usize>,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha0) {
        return Err(Error::invalid("alpha0", format!("{alpha0} is outside [0, 1]")));
    }
    let scale = schedule.scale(epoch, total)?;
    if matches!(zero_from, Some(z) if epoch >= z) {
        return Ok(0.0);
    }
    Ok((alpha0 * scale).clamp(0.0, 1.0))
}

/// Linear warmup followed by cosine decay to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub max_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn new(max_lr: f64, warmup_epochs: usize, total_epochs: usize) -> Self {
        Self {
            max_lr,
            warmup_epochs,
            total_epochs,
        }
    }

    /// Learning rate used while training the 0-based epoch `epoch`.
    ///
    /// Warmup epochs run at `max_lr·(e+1)/warmup`, so the first epoch is not
    /// wasted at zero rate; afterwards the cosine branch of [`lr_at_epoch`]
    /// applies unchanged.
    pub fn for_training_epoch(&self, epoch: usize) -> Result<f64> {
        if epoch < self.warmup_epochs {
            lr_at_epoch(self, epoch + 1)
        } else {
            lr_at_epoch(self, epoch)
        }
    }
}

/// Learning rate at epoch `e`: `max_lr·e/warmup` for `e ≤ warmup`, then
/// `max_lr·(1 + cos(π·(e - warmup)/(total - warmup)))/2`.
pub fn lr_at_epoch(sched: &LrSchedule, e: usize) -> Result<f64> {
    if !(sched.max_lr >= 0.0) || !sched.max_lr.is_finite() {
        return Err(Error::invalid("max_lr", "must be non-negative and finite"));
    }
    if sched.total_epochs == 0 {
        return Err(Error::invalid("total_epochs", "must be at least 1"));
    }
    if e > sched.total_epochs {
        return Err(Error::invalid(
            "epoch",
            format!("epoch {e} exceeds total {}", sched.total_epochs),
        ));
    }
    let w = sched.warmup_epochs.min(sched.total_epochs);
    if w > 0 && e <= w {
        return Ok(sched.max_lr * e as f64 / w as f64);
    }
    let span = (sched.total_epochs - w) as f64;
    let progress = (e - w) as f64 / span;
    let lr = sched.max_lr * (1.0 + (PI * progress).cos()) / 2.0;
    Ok(lr.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const ALL_KINDS: [AnnealKind; 6] = [
        AnnealKind::Fixed,
        AnnealKind::Linear,
        AnnealKind::Cosine,
        AnnealKind::Sigmoid,
        AnnealKind::SigmoidCosine,
        AnnealKind::Exponential,
    ];

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_decay(0, 100).unwrap(), 1.0);
        assert_abs_diff_eq!(cosine_decay(100, 100).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cosine_decay(50, 100).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn sigmoid_examples() {
        // 1 - σ(-6) and 1 - σ(6), evaluated with 30-digit arithmetic.
        assert_abs_diff_eq!(
            sigmoid_decay(0, 100, -6.0, 6.0).unwrap(),
            0.997_527_376_843_365_2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            sigmoid_decay(100, 100, -6.0, 6.0).unwrap(),
            0.002_472_623_156_634_774,
            epsilon = 1e-15
        );
        assert_eq!(sigmoid_decay(50, 100, -6.0, 6.0).unwrap(), 0.5);
    }

    #[test]
    fn sigmoid_cosine_examples() {
        assert_eq!(sigmoid_cosine_decay(0, 100, -6.0, 6.0).unwrap(), 1.0);
        assert_abs_diff_eq!(
            sigmoid_cosine_decay(50, 100, -6.0, 6.0).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        // At i=90 the cosine branch wins: 0.024471741852423214 vs 0.008162571153159895.
        assert_abs_diff_eq!(
            sigmoid_cosine_decay(90, 100, -6.0, 6.0).unwrap(),
            0.024_471_741_852_423_214,
            epsilon = 1e-15
        );
    }

    #[test]
    fn exponential_examples() {
        assert_eq!(exponential_decay(0.0, 1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(
            exponential_decay(1.0, 1.0).unwrap(),
            0.367_879_441_171_442_3,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            exponential_decay(3.0, 0.5).unwrap(),
            0.223_130_160_148_429_83,
            epsilon = 1e-15
        );
        assert!(exponential_decay(1.0, 0.0).is_err());
        assert!(exponential_decay(1.0, -2.0).is_err());
    }

    #[test]
    fn range_errors() {
        assert!(cosine_decay(1, 0).is_err());
        assert!(cosine_decay(101, 100).is_err());
        assert!(sigmoid_decay(1, 10, 6.0, -6.0).is_err());
        assert!(sigmoid_cosine_decay(11, 10, -6.0, 6.0).is_err());
    }

    #[test]
    fn alpha_examples() {
        let cos = AnnealSchedule::new(AnnealKind::Cosine);
        assert_eq!(alpha_at_epoch(0.75, &cos, 0, 100, Some(90)).unwrap(), 0.75);
        assert_eq!(alpha_at_epoch(0.75, &cos, 95, 100, Some(90)).unwrap(), 0.0);
        let fixed = AnnealSchedule::new(AnnealKind::Fixed);
        assert_eq!(alpha_at_epoch(0.5, &fixed, 40, 100, None).unwrap(), 0.5);
        assert!(alpha_at_epoch(1.5, &fixed, 0, 10, None).is_err());
        assert!(alpha_at_epoch(-0.1, &fixed, 0, 10, None).is_err());
    }

    #[test]
    fn alpha_is_bitwise_zero_after_reset() {
        for kind in ALL_KINDS {
            let sched = AnnealSchedule::new(kind);
            for e in 30..=40 {
                let a = alpha_at_epoch(0.9, &sched, e, 40, Some(30)).unwrap();
                assert_eq!(a.to_bits(), 0.0f64.to_bits());
            }
        }
    }

    #[test]
    fn lr_examples() {
        let s = LrSchedule::new(0.256, 5, 100);
        assert_eq!(lr_at_epoch(&s, 5).unwrap(), 0.256);
        assert_abs_diff_eq!(lr_at_epoch(&s, 100).unwrap(), 0.0, epsilon = 1e-15);
        let s = LrSchedule::new(0.2, 4, 100);
        assert_abs_diff_eq!(lr_at_epoch(&s, 2).unwrap(), 0.1, epsilon = 1e-15);
        assert!(lr_at_epoch(&s, 101).is_err());
    }

    #[test]
    fn lr_training_epochs_skip_zero_rate() {
        let s = LrSchedule::new(1.0, 4, 20);
        assert_eq!(s.for_training_epoch(0).unwrap(), 0.25);
        assert_eq!(s.for_training_epoch(3).unwrap(), 1.0);
        assert_eq!(s.for_training_epoch(4).unwrap(), 1.0);
        assert!(s.for_training_epoch(19).unwrap() > 0.0);
        let no_warmup = LrSchedule::new(1.0, 0, 10);
        assert_eq!(no_warmup.for_training_epoch(0).unwrap(), 1.0);
    }

    #[test]
    fn lr_is_nonnegative_and_peaks_at_warmup() {
        let s = LrSchedule::new(0.3, 5, 60);
        let lrs: Vec<f64> = (0..=60).map(|e| lr_at_epoch(&s, e).unwrap()).collect();
        assert!(lrs.iter().all(|&v| v >= 0.0));
        assert!(lrs[..=5].windows(2).all(|w| w[0] <= w[1]));
        assert!(lrs[5..].windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn schedules_are_monotone_for_small_totals() {
        for kind in ALL_KINDS {
            let sched = AnnealSchedule::new(kind);
            for total in 1..=512usize {
                let mut prev = sched.scale(0, total).unwrap();
                assert!((0.0..=1.0).contains(&prev));
                for e in 1..=total {
                    let cur = sched.scale(e, total).unwrap();
                    assert!((0.0..=1.0).contains(&cur), "{kind:?} out of range");
                    if kind == AnnealKind::Fixed {
                        assert_eq!(cur, 1.0);
                    } else {
                        assert!(cur <= prev, "{kind:?} rose at {e}/{total}");
                    }
                    prev = cur;
                }
            }
        }
    }

    #[test]
    fn cosine_is_symmetric() {
        for total in 1..=300usize {
            for i in 0..=total {
                let sum = cosine_decay(i, total).unwrap() + cosine_decay(total - i, total).unwrap();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigmoid_cosine_dominates_both_components() {
        for i in 0..=512 {
            let sc = sigmoid_cosine_decay(i, 512, -6.0, 6.0).unwrap();
            assert!(sc >= cosine_decay(i, 512).unwrap());
            assert!(sc >= sigmoid_decay(i, 512, -6.0, 6.0).unwrap());
        }
    }

    #[test]
    fn schedule_json_defaults() {
        let s: AnnealSchedule = serde_json::from_str(r#"{"kind":"sigmoid_cosine"}"#).unwrap();
        assert_eq!(s, AnnealSchedule::new(AnnealKind::SigmoidCosine));
    }
}
