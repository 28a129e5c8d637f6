//! Randomized-response label flipping and Gaussian parameter noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Parameterized;

#[derive(Debug, Error, PartialEq)]
pub enum DefenseError {
    #[error("flip probability {0} outside [0, 1]")]
    FlipProbability(f64),
    #[error("need at least 2 classes, got {0}")]
    Classes(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("noise scale {0} must be finite and non-negative")]
    Sigma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelPerturbConfig {
    pub flip_p: f64,
    pub classes: usize,
}

impl LabelPerturbConfig {
    pub fn new(flip_p: f64, classes: usize) -> Result<Self, DefenseError> {
        let cfg = LabelPerturbConfig { flip_p, classes };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DefenseError> {
        if !(0.0..=1.0).contains(&self.flip_p) {
            return Err(DefenseError::FlipProbability(self.flip_p));
        }
        if self.classes < 2 {
            return Err(DefenseError::Classes(self.classes));
        }
        Ok(())
    }
}

/// Keep `y` with probability `1 - p`, otherwise pick one of the other `C - 1`
/// classes uniformly.
///
/// Always consumes exactly two draws so the stream position does not depend on
/// the outcome.
pub fn perturb_label<R: Rng + ?Sized>(y: usize, cfg: &LabelPerturbConfig, rng: &mut R) -> Result<usize, DefenseError> {
    cfg.validate()?;
    if y >= cfg.classes {
        return Err(DefenseError::LabelOutOfRange { label: y, classes: cfg.classes });
    }
    let u: f64 = rng.random();
    let other = rng.random_range(0..cfg.classes - 1);
    if u < cfg.flip_p {
        Ok(if other >= y { other + 1 } else { other })
    } else {
        Ok(y)
    }
}

/// Expected accuracy of randomized-response labels given base accuracy `a`.
pub fn expected_perturbed_accuracy(a: f64, p: f64, classes: usize) -> f64 {
    a * (1.0 - p) + (1.0 - a) * p / (classes as f64 - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPerturbConfig {
    pub sigma: f64,
}

impl ModelPerturbConfig {
    pub fn new(sigma: f64) -> Result<Self, DefenseError> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(DefenseError::Sigma(sigma));
        }
        Ok(ModelPerturbConfig { sigma })
    }
}

/// Add independent `N(0, sigma^2)` noise to every weight and bias, in
/// parameter iteration order.
pub fn perturb_model<M: Parameterized + ?Sized, R: Rng + ?Sized>(
    model: &mut M,
    cfg: &ModelPerturbConfig,
    rng: &mut R,
) -> Result<(), DefenseError> {
    ModelPerturbConfig::new(cfg.sigma)?;
    if cfg.sigma == 0.0 {
        return Ok(());
    }
    for (_, p) in model.named_params_mut() {
        for v in p.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += cfg.sigma * z;
        }
    }
    Ok(())
}
