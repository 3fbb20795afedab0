use crate::error::{Error, Result};
use crate::schedules::{alpha_at_epoch, sigmoid_cosine_decay, AnnealSchedule};

use super::config::{AutoTuneConfig, TrainConfig};

/// One closed-loop α update from the mean training loss of `epoch`.
///
/// α grows by `(1 + eps1)` when the loss is at least `(1 + eps0)` times the
/// reference loss and shrinks by `(1 - eps2)` otherwise, clamped to `[0, 1]`.
pub fn autotune_alpha(alpha: f64, epoch: usize, loss: f64, cfg: &AutoTuneConfig) -> Result<f64> {
    if epoch >= cfg.tuning_epochs {
        return Err(Error::invalid("epoch", format!("{epoch} is past the tuning window")));
    }
    let reference = *cfg
        .ref_loss
        .get(epoch)
        .ok_or_else(|| Error::invalid("ref_loss", format!("no entry for epoch {epoch}")))?;
    if !loss.is_finite() || !reference.is_finite() {
        return Err(Error::NonFinite("autotune loss"));
    }
    let next = if loss >= (1.0 + cfg.eps0) * reference {
        alpha * (1.0 + cfg.eps1)
    } else {
        alpha * (1.0 - cfg.eps2)
    };
    Ok(next.clamp(0.0, 1.0))
}

/// α set at the end of `epoch` after tuning: `tuned × sigmoid-cosine(epoch -
/// tuning_epochs, total - tuning_epochs)`, and `0.0` once `epoch` reaches
/// `reset_epoch`.
pub fn post_tune_schedule(
    tuned: f64,
    epoch: usize,
    tuning_epochs: usize,
    total: usize,
    reset_epoch: Option<usize>,
    l0: f64,
    l1: f64,
) -> Result<f64> {
    if epoch < tuning_epochs {
        return Err(Error::invalid("epoch", "still inside the tuning window"));
    }
    if matches!(reset_epoch, Some(r) if epoch >= r) {
        return Ok(0.0);
    }
    let span = total.saturating_sub(tuning_epochs);
    if span == 0 {
        return Ok(tuned);
    }
    Ok((tuned * sigmoid_cosine_decay(epoch - tuning_epochs, span, l0, l1)?).clamp(0.0, 1.0))
}

/// Supplies the α used for each epoch, either from the open-loop schedule or
/// from autotuning.
///
/// Under autotuning α changes at the end of each epoch and the new value
/// applies to the next one: during the tuning window by [`autotune_alpha`],
/// afterwards by [`post_tune_schedule`] evaluated at the finished epoch.
#[derive(Debug, Clone)]
pub struct AlphaController {
    alpha0: f64,
    schedule: AnnealSchedule,
    total: usize,
    zero_from: Option<usize>,
    autotune: Option<AutoTuneConfig>,
    /// α for the next epoch under autotuning.
    current: f64,
    /// α frozen at the end of the tuning window.
    tuned: Option<f64>,
}

impl AlphaController {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            alpha0: cfg.alpha0,
            schedule: cfg.schedule,
            total: cfg.epochs,
            zero_from: cfg.zero_from,
            autotune: cfg.autotune.clone(),
            current: cfg.alpha0,
            tuned: None,
        }
    }

    /// α used while training `epoch`.
    pub fn alpha_for_epoch(&self, epoch: usize) -> Result<f64> {
        if self.autotune.is_none() {
            return alpha_at_epoch(self.alpha0, &self.schedule, epoch, self.total, self.zero_from);
        }
        if matches!(self.zero_from, Some(z) if epoch >= z) {
            return Ok(0.0);
        }
        Ok(self.current)
    }

    /// Feeds back the mean training loss of the finished `epoch`.
    pub fn end_epoch(&mut self, epoch: usize, loss: f64) -> Result<()> {
        let Some(at) = &self.autotune else {
            return Ok(());
        };
        self.current = if epoch < at.tuning_epochs {
            autotune_alpha(self.current, epoch, loss, at)?
        } else {
            let tuned = *self.tuned.get_or_insert(self.current);
            post_tune_schedule(
                tuned,
                epoch,
                at.tuning_epochs,
                self.total,
                at.reset_epoch,
                self.schedule.l0,
                self.schedule.l1,
            )?
        };
        if matches!(at.reset_epoch, Some(r) if epoch >= r) {
            self.current = 0.0;
        }
        Ok(())
    }

    /// α frozen after the tuning window, once it has closed.
    pub fn tuned(&self) -> Option<f64> {
        self.tuned
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(ref_loss: Vec<f64>) -> AutoTuneConfig {
        AutoTuneConfig::new(ref_loss.len(), ref_loss)
    }

    #[test]
    fn update_examples() {
        let c = cfg(vec![2.0]);
        assert_eq!(autotune_alpha(0.5, 0, 2.1, &c).unwrap(), 0.5 * 1.05);
        assert_eq!(autotune_alpha(0.5, 0, 2.0, &c).unwrap(), 0.5 * (1.0 - 0.005));
        assert_eq!(autotune_alpha(0.99, 0, 2.1, &c).unwrap(), 1.0);
    }

    #[test]
    fn boundary_loss_increases_alpha() {
        let c = cfg(vec![1.0]);
        assert_eq!(autotune_alpha(0.5, 0, 1.0 + 0.01, &c).unwrap(), 0.5 * 1.05);
    }

    #[test]
    fn outside_window_is_rejected() {
        let c = cfg(vec![1.0]);
        assert!(autotune_alpha(0.5, 1, 1.0, &c).is_err());
    }

    #[test]
    fn post_tune_examples() {
        assert!((post_tune_schedule(0.6, 10, 0, 20, None, -6.0, 6.0).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(post_tune_schedule(0.6, 10, 0, 20, Some(10), -6.0, 6.0).unwrap(), 0.0);
        assert_eq!(post_tune_schedule(0.6, 5, 5, 25, None, -6.0, 6.0).unwrap(), 0.6);
    }

    #[test]
    fn increase_decrease_and_clamp_values() {
        let c = cfg(vec![1.0]);
        assert_eq!(autotune_alpha(0.5, 0, 1.02, &c).unwrap(), 0.5 * (1.0 + 0.05));
        assert!((autotune_alpha(0.5, 0, 1.02, &c).unwrap() - 0.525).abs() < 1e-15);
        assert!((autotune_alpha(0.5, 0, 1.005, &c).unwrap() - 0.4975).abs() < 1e-15);
        assert_eq!(autotune_alpha(1.0, 0, 1.02, &c).unwrap(), 1.0);
    }

    #[test]
    fn post_tune_is_monotone() {
        let mut prev = f64::INFINITY;
        for e in 3..=40 {
            let a = post_tune_schedule(0.8, e, 3, 40, None, -6.0, 6.0).unwrap();
            assert!(a <= prev);
            prev = a;
        }
    }
}
