use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{TrainingCurve, TrainingSet};
use crate::error::{invalid, Result};
use crate::heads::{loss_and_grad, loss_value, LossConfig, PredictorHead};
use crate::seed::mix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_images: usize,
    pub num_iterations: usize,
    /// Full-set loss is recorded every this many iterations (and at the end).
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_images: 16,
            num_iterations: 1000,
            eval_every: 1,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid!("learning rate must be finite and nonnegative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_images == 0 || self.num_iterations == 0 || self.eval_every == 0 {
            return Err(invalid!("batch_images, num_iterations and eval_every must be at least 1"));
        }
        Ok(())
    }
}

/// Momentum SGD: `v ← μv − η∇L(batch)`, `w ← w + v`, batches of images
/// sampled as in the mini-batch Newton variant.
pub fn train_sgd(
    mut head: PredictorHead,
    data: &TrainingSet,
    loss: &LossConfig,
    cfg: &SgdConfig,
) -> Result<(PredictorHead, TrainingCurve)> {
    cfg.validate()?;
    loss.validate()?;
    if data.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    let mut velocity = vec![0.0; head.num_params()];
    let mut curve = TrainingCurve::default();
    curve.push(0, 0.0, loss_value(&head, data.batch(), loss)?.total);
    let mut elapsed = 0.0;
    for it in 1..=cfg.num_iterations {
        let t0 = Instant::now();
        let mb = data.sample_images(cfg.batch_images, mix(cfg.seed ^ 0x6d62, it as u64));
        let (_, grad) = loss_and_grad(&head, &mb, loss)?;
        for (v, g) in velocity.iter_mut().zip(&grad) {
            *v = cfg.momentum * *v - cfg.learning_rate * g;
        }
        head.add_flat(&velocity)?;
        elapsed += t0.elapsed().as_secs_f64();
        if it % cfg.eval_every == 0 || it == cfg.num_iterations {
            curve.push(it, elapsed, loss_value(&head, data.batch(), loss)?.total);
        }
    }
    Ok((head, curve))
}
