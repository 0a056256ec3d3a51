use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Batch;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub copies: usize,
    pub noise_std: f64,
    pub dropout_rate: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            copies: 5,
            noise_std: 0.1,
            dropout_rate: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.copies == 0 {
            return Err(invalid!("augmentation needs at least one copy"));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(invalid!("noise std must be finite and nonnegative, got {}", self.noise_std));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid!("dropout rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        Ok(())
    }
}

/// Stacks `copies` perturbed replicas of the batch.
///
/// Each replica adds `N(0, noise_std²)` to every coordinate, then applies
/// inverted dropout: a coordinate is zeroed with probability `dropout_rate`
/// and survivors are scaled by `1 / (1 − dropout_rate)`.
pub fn augment(batch: &Batch, cfg: &AugmentConfig, seed: u64) -> Result<Batch> {
    cfg.validate()?;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| invalid!("{e}"))?;
    let keep_scale = 1.0 / (1.0 - cfg.dropout_rate);
    let mut rng = crate::seed::rng(seed, 0xa06);
    let src = batch.features();
    let mut out = Vec::with_capacity(src.len() * cfg.copies);
    for _ in 0..cfg.copies {
        for &x in src {
            let mut v = x;
            if cfg.noise_std > 0.0 {
                v += noise.sample(&mut rng);
            }
            if cfg.dropout_rate > 0.0 {
                v = if rng.random::<f64>() < cfg.dropout_rate { 0.0 } else { v * keep_scale };
            }
            out.push(v);
        }
    }
    Ok(batch.with_features(out, cfg.copies))
}
