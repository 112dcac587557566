use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DIV_FACTOR: f64 = 25.0;
const FINAL_DIV_FACTOR: f64 = 1e4;

/// Cosine one-cycle learning rate: rises from `max_lr / 25` to `max_lr`
/// over the warm-up steps, then falls to `max_lr / 1e4` at the last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycleSchedule {
    pub max_lr: f64,
    pub total_steps: usize,
    pub warmup_fraction: f64,
}

impl OneCycleSchedule {
    pub fn new(max_lr: f64, total_steps: usize, warmup_fraction: f64) -> Result<Self> {
        if !(max_lr > 0.0 && max_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("max_lr {max_lr} must be positive")));
        }
        if !(warmup_fraction > 0.0 && warmup_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "warm-up fraction {warmup_fraction} outside (0, 1)"
            )));
        }
        if total_steps < 2 {
            return Err(Error::InvalidArgument("one-cycle schedule needs at least 2 steps".into()));
        }
        Ok(Self {
            max_lr,
            total_steps,
            warmup_fraction,
        })
    }

    /// Index of the peak step.
    pub fn warmup_steps(&self) -> usize {
        let w = (self.warmup_fraction * self.total_steps as f64).round() as usize;
        w.clamp(1, self.total_steps - 1)
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        if step >= self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "step {step} outside schedule of {} steps",
                self.total_steps
            )));
        }
        let initial = self.max_lr / DIV_FACTOR;
        let last = self.max_lr / FINAL_DIV_FACTOR;
        let warmup = self.warmup_steps();
        if step <= warmup {
            return Ok(anneal(initial, self.max_lr, step as f64 / warmup as f64));
        }
        let decay = (self.total_steps - 1 - warmup) as f64;
        Ok(anneal(self.max_lr, last, (step - warmup) as f64 / decay))
    }
}

/// Cosine interpolation, exact at `frac == 1`.
fn anneal(from: f64, to: f64, frac: f64) -> f64 {
    to + (from - to) * 0.5 * (1.0 + (PI * frac).cos())
}
