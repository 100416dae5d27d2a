use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant learning rate, multiplied by `decay_factor` at every milestone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub milestones: Vec<u64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            initial_lr: 1e-3,
            decay_factor: 0.5,
            milestones: vec![200_000, 300_000, 400_000, 480_000, 500_000],
        }
    }
}

/// Iteration count of the full-length run.
pub const FULL_ITERATIONS: u64 = 520_000;

impl Schedule {
    /// Milestones multiplied by `factor`, keeping the shape of the schedule.
    pub fn scaled(&self, factor: f64) -> Result<Schedule> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Config(format!("iteration scale must be positive, got {factor}")));
        }
        let s = Schedule {
            milestones: self
                .milestones
                .iter()
                .map(|&m| ((m as f64 * factor).round() as u64).max(1))
                .collect(),
            ..self.clone()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0) || !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("learning rate and decay factor must be positive".into()));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "milestones must be strictly increasing: {:?}",
                self.milestones
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| step >= m).count();
        self.initial_lr * self.decay_factor.powi(passed as i32)
    }
}
