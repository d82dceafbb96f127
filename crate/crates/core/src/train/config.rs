use crate::density::DEFAULT_SIGMA;
use crate::flow::DEFAULT_TAU;
use crate::tensor::AdamConfig;

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `lr` towards 0 over all optimizer steps.
    Cosine,
}

impl LrSchedule {
    pub fn as_str(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }

    /// Learning rate for 0-based `step` of `total`.
    pub fn lr_at(self, lr: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => lr,
            LrSchedule::Cosine => {
                let t = step as f64 / total.max(1) as f64;
                lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(format!("unknown lr schedule {other:?} (constant|cosine)")),
        }
    }
}

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Optimizer steps per epoch; 0 means one pass over the training frames.
    pub steps_per_epoch: usize,
    pub seed: u64,
    /// Gaussian sigma for ground-truth density maps.
    pub sigma: f64,
    /// Flow magnitude threshold applied before encoding.
    pub tau: f32,
    /// Mean-luminance cutoff below which frames route to the night model.
    pub night_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            lr_schedule: LrSchedule::Constant,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 30,
            batch_size: 1,
            steps_per_epoch: 0,
            seed: 0,
            sigma: DEFAULT_SIGMA,
            tau: DEFAULT_TAU,
            night_threshold: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if !(self.tau >= 0.0) {
            return bad("tau must be >= 0");
        }
        if !(self.night_threshold >= 0.0) {
            return bad("night_threshold must be >= 0");
        }
        Ok(())
    }
}
