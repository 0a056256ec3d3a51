use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{HeadObjective, TrainingCurve, TrainingSet, TwiceDifferentiable};
use crate::error::{invalid, Error, Result};
use crate::heads::{augment, loss_value, AugmentConfig, Batch, LossConfig, PredictorHead};
use crate::linalg::{cg_solve, norm};
use crate::seed::mix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    pub num_iterations: usize,
    pub n_cg: usize,
    pub lambda: f64,
    pub augment: Option<AugmentConfig>,
    /// Images per mini-batch; only read by the mini-batch variant.
    pub batch_images: usize,
    /// A step longer than this aborts training with a numerical error.
    pub max_step_norm: f64,
    pub seed: u64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            num_iterations: 30,
            n_cg: 2,
            lambda: 0.0,
            augment: None,
            batch_images: 16,
            max_step_norm: 1e3,
            seed: 0,
        }
    }
}

impl NewtonConfig {
    pub fn minibatch() -> Self {
        Self {
            lambda: 0.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_iterations == 0 || self.n_cg == 0 {
            return Err(invalid!("num_iterations and n_cg must be at least 1"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid!("lambda must be finite and nonnegative, got {}", self.lambda));
        }
        if self.batch_images == 0 {
            return Err(invalid!("batch_images must be at least 1"));
        }
        if !(self.max_step_norm > 0.0) {
            return Err(invalid!("max_step_norm must be positive"));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonDiagnostics {
    pub loss: f64,
    pub grad_norm: f64,
    /// `‖(H + λI)Δw + J‖` after the truncated solve.
    pub cg_residual: f64,
    pub cg_iters: usize,
    pub step_norm: f64,
}

/// `Δw ≈ −(H + λI)⁻¹ J` from `n_cg` CG steps started at zero.
pub fn newton_direction<O: TwiceDifferentiable + ?Sized>(
    objective: &O,
    lambda: f64,
    n_cg: usize,
) -> Result<(Vec<f64>, NewtonDiagnostics)> {
    let (loss, grad) = objective.value_and_grad()?;
    let op = objective.hessian(lambda)?;
    let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
    let sol = cg_solve(op.as_ref(), &rhs, n_cg, 0.0)?;
    let diag = NewtonDiagnostics {
        loss,
        grad_norm: norm(&grad),
        cg_residual: sol.residual_norm,
        cg_iters: sol.iters_used,
        step_norm: norm(&sol.x),
    };
    Ok((sol.x, diag))
}

pub fn newton_step(
    head: &PredictorHead,
    batch: &Batch,
    loss: &LossConfig,
    lambda: f64,
    n_cg: usize,
) -> Result<(Vec<f64>, NewtonDiagnostics)> {
    newton_direction(&HeadObjective { head, batch, loss }, lambda, n_cg)
}

fn apply_step(head: &mut PredictorHead, step: &[f64], diag: &NewtonDiagnostics, cfg: &NewtonConfig, it: usize) -> Result<()> {
    if !diag.step_norm.is_finite() || diag.step_norm > cfg.max_step_norm {
        return Err(Error::Numerical(format!(
            "Newton step norm {:.3e} exceeds the {:.1e} cap at iteration {it}; increase lambda",
            diag.step_norm, cfg.max_step_norm
        )));
    }
    head.add_flat(step)
}

fn maybe_augment(batch: &Batch, cfg: &NewtonConfig, it: usize) -> Result<Option<Batch>> {
    match &cfg.augment {
        Some(a) => Ok(Some(augment(batch, a, mix(cfg.seed, it as u64))?)),
        None => Ok(None),
    }
}

/// Newton-CG over the whole training set, `cfg.num_iterations` times.
///
/// With augmentation enabled, fresh copies are drawn every iteration. The
/// curve records the loss on the unaugmented set; its clock only advances
/// during the updates.
pub fn train_full_batch(
    mut head: PredictorHead,
    data: &TrainingSet,
    loss: &LossConfig,
    cfg: &NewtonConfig,
) -> Result<(PredictorHead, TrainingCurve)> {
    cfg.validate()?;
    let batch = data.batch();
    let mut curve = TrainingCurve::default();
    curve.push(0, 0.0, loss_value(&head, batch, loss)?.total);
    let mut elapsed = 0.0;
    for it in 1..=cfg.num_iterations {
        let t0 = Instant::now();
        let augmented = maybe_augment(batch, cfg, it)?;
        let (step, diag) = newton_step(&head, augmented.as_ref().unwrap_or(batch), loss, cfg.lambda, cfg.n_cg)?;
        apply_step(&mut head, &step, &diag, cfg, it)?;
        elapsed += t0.elapsed().as_secs_f64();
        curve.push(it, elapsed, loss_value(&head, batch, loss)?.total);
    }
    Ok((head, curve))
}

/// One regularized Newton-CG step per sampled mini-batch of images.
pub fn train_minibatch(
    mut head: PredictorHead,
    data: &TrainingSet,
    loss: &LossConfig,
    cfg: &NewtonConfig,
) -> Result<(PredictorHead, TrainingCurve)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    let mut curve = TrainingCurve::default();
    curve.push(0, 0.0, loss_value(&head, data.batch(), loss)?.total);
    let mut elapsed = 0.0;
    for it in 1..=cfg.num_iterations {
        let t0 = Instant::now();
        let mb = data.sample_images(cfg.batch_images, mix(cfg.seed ^ 0x6d62, it as u64));
        let augmented = maybe_augment(&mb, cfg, it)?;
        let (step, diag) = newton_step(&head, augmented.as_ref().unwrap_or(&mb), loss, cfg.lambda, cfg.n_cg)?;
        apply_step(&mut head, &step, &diag, cfg, it)?;
        elapsed += t0.elapsed().as_secs_f64();
        curve.push(it, elapsed, loss_value(&head, data.batch(), loss)?.total);
    }
    Ok((head, curve))
}
