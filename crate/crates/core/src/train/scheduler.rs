use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlateauMode {
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    /// Relative improvement needed to reset patience.
    pub threshold: f64,
    pub min_lr: f64,
    pub patience: usize,
    pub factor: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            threshold: 1e-3,
            min_lr: 1e-6,
            patience: 5,
            factor: 0.5,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self, lr: f64) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!("scheduler factor must lie in (0, 1), got {}", self.factor)));
        }
        if !(self.min_lr > 0.0 && self.min_lr <= lr) {
            return Err(Error::Config(format!(
                "min_lr {} must be positive and not above the learning rate {lr}",
                self.min_lr
            )));
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::Config("scheduler threshold must be non-negative".into()));
        }
        Ok(())
    }
}

/// Reduce-on-plateau with relative thresholding: after more than `patience`
/// epochs without improvement the learning rate is multiplied by `factor`,
/// never going below `min_lr`.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    cfg: SchedulerConfig,
    mode: PlateauMode,
    lr: f64,
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(cfg: SchedulerConfig, mode: PlateauMode, lr: f64) -> Self {
        Self {
            cfg,
            mode,
            lr,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    fn improves(&self, value: f64) -> bool {
        match (self.best, self.mode) {
            (None, _) => true,
            (Some(b), PlateauMode::Max) => value > b * (1.0 + self.cfg.threshold),
            (Some(b), PlateauMode::Min) => value < b * (1.0 - self.cfg.threshold),
        }
    }

    /// Feeds one epoch's metric and returns the learning rate for the next epoch.
    pub fn step(&mut self, value: f64) -> f64 {
        if self.improves(value) {
            self.best = Some(value);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.cfg.patience {
            self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
            self.bad_epochs = 0;
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_metric_reduces_after_patience() {
        let cfg = SchedulerConfig {
            patience: 2,
            ..Default::default()
        };
        let mut s = PlateauScheduler::new(cfg, PlateauMode::Max, 1e-3);
        // the first value sets the reference; the next `patience` are tolerated
        for _ in 0..3 {
            assert_eq!(s.step(0.5), 1e-3);
        }
        assert_eq!(s.step(0.5), 5e-4);
        for _ in 0..100 {
            s.step(0.5);
        }
        assert_eq!(s.lr(), 1e-6);
    }

    #[test]
    fn relative_threshold_and_min_mode() {
        let mut s = PlateauScheduler::new(SchedulerConfig { patience: 0, ..Default::default() }, PlateauMode::Min, 1.0);
        s.step(1.0);
        assert_eq!(s.step(0.9995), 0.5, "within the relative threshold counts as no improvement");
        assert_eq!(s.step(0.5), 0.5);
    }
}
