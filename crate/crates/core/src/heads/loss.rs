use serde::{Deserialize, Serialize};

use super::{add_scaled_input, affine, softmax_in_place, Batch, PredictorHead};
use crate::error::{invalid, Error, Result};
use crate::linalg::LinearOperator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RegressionLoss {
    /// Squared Euclidean norm of the 4-vector residual.
    L2,
    /// Smooth-L1 summed over the 4 coordinates, quadratic below `beta`.
    SmoothL1 { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub regression: RegressionLoss,
    pub cls_weight: f64,
    pub loc_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            regression: RegressionLoss::L2,
            cls_weight: 1.0,
            loc_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn smooth_l1() -> Self {
        Self {
            regression: RegressionLoss::SmoothL1 { beta: 1.0 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let RegressionLoss::SmoothL1 { beta } = self.regression {
            if !(beta > 0.0) {
                return Err(invalid!("smooth-L1 beta must be positive, got {beta}"));
            }
        }
        if !(self.cls_weight >= 0.0) || !(self.loc_weight >= 0.0) {
            return Err(invalid!("loss weights must be nonnegative"));
        }
        Ok(())
    }

    pub fn is_l2(&self) -> bool {
        matches!(self.regression, RegressionLoss::L2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    /// Weighted sum of both terms.
    pub total: f64,
    pub cls: f64,
    pub loc: f64,
}

fn check_batch(head: &PredictorHead, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(invalid!("empty batch"));
    }
    if batch.feature_dim() != head.feature_dim() {
        return Err(invalid!(
            "batch feature width {} != head width {}",
            batch.feature_dim(),
            head.feature_dim()
        ));
    }
    let c = head.num_categories() as i32;
    if let Some(l) = batch.labels().iter().find(|&&l| l < -1 || l >= c) {
        return Err(invalid!("label {l} out of range for {c} categories"));
    }
    Ok(())
}

fn class_index(head: &PredictorHead, label: i32) -> usize {
    if label < 0 {
        head.background()
    } else {
        label as usize
    }
}

/// Loss and its exact gradient w.r.t. the flattened head weights.
///
/// `L_cls = (1/N) Σ −log p[y]` over all records (background at index C);
/// `L_loc = (1/N) Σ_fg ρ(R_y x̃ − t)`. Both are normalized by the total
/// record count `N`.
pub fn loss_and_grad(head: &PredictorHead, batch: &Batch, cfg: &LossConfig) -> Result<(LossValue, Vec<f64>)> {
    cfg.validate()?;
    check_batch(head, batch)?;
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let k = head.num_categories() + 1;
    let w = head.feature_dim() + 1;
    let cls_len = head.classifier().len();
    let mut grad = vec![0.0; head.num_params()];
    let (g_cls, g_reg) = grad.split_at_mut(cls_len);
    let mut probs = vec![0.0; k];
    let (mut cls_sum, mut loc_sum) = (0.0, 0.0);

    for i in 0..n {
        let x = batch.feature(i);
        let y = class_index(head, batch.label(i));
        for (c, p) in probs.iter_mut().enumerate() {
            *p = affine(head.classifier_row(c), x);
        }
        let logit_y = probs[y];
        let lse = softmax_in_place(&mut probs);
        cls_sum += lse - logit_y;
        if cfg.cls_weight != 0.0 {
            for c in 0..k {
                let coeff = probs[c] - if c == y { 1.0 } else { 0.0 };
                add_scaled_input(&mut g_cls[c * w..(c + 1) * w], cfg.cls_weight * inv_n * coeff, x);
            }
        }

        if y == head.background() {
            continue;
        }
        let t = batch.target(i);
        for j in 0..4 {
            let row = 4 * y + j;
            let r = affine(head.regressor_row(row), x) - t[j];
            let (value, slope) = match cfg.regression {
                RegressionLoss::L2 => (r * r, 2.0 * r),
                RegressionLoss::SmoothL1 { beta } => {
                    if r.abs() < beta {
                        (0.5 * r * r / beta, r / beta)
                    } else {
                        (r.abs() - 0.5 * beta, r.signum())
                    }
                }
            };
            loc_sum += value;
            if cfg.loc_weight != 0.0 {
                add_scaled_input(&mut g_reg[row * w..(row + 1) * w], cfg.loc_weight * inv_n * slope, x);
            }
        }
    }

    let cls = cls_sum * inv_n;
    let loc = loc_sum * inv_n;
    let total = cfg.cls_weight * cls + cfg.loc_weight * loc;
    if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("non-finite loss or gradient".into()));
    }
    Ok((LossValue { total, cls, loc }, grad))
}

/// Loss only; skips gradient accumulation.
pub fn loss_value(head: &PredictorHead, batch: &Batch, cfg: &LossConfig) -> Result<LossValue> {
    let mut no_grad = *cfg;
    let (cw, lw) = (cfg.cls_weight, cfg.loc_weight);
    no_grad.cls_weight = 0.0;
    no_grad.loc_weight = 0.0;
    let (v, _) = loss_and_grad(head, batch, &no_grad)?;
    Ok(LossValue {
        total: cw * v.cls + lw * v.loc,
        ..v
    })
}

/// `(H + λI)·v` at the given head, where `H` is the exact Hessian of the
/// L2-regression loss.
///
/// Holds the per-sample softmax probabilities so repeated products at the
/// same weights skip the forward pass.
pub struct HessianOperator<'a> {
    head: &'a PredictorHead,
    batch: &'a Batch,
    cfg: LossConfig,
    lambda: f64,
    probs: Vec<f64>,
}

impl<'a> HessianOperator<'a> {
    pub fn new(head: &'a PredictorHead, batch: &'a Batch, cfg: &LossConfig, lambda: f64) -> Result<Self> {
        cfg.validate()?;
        if !cfg.is_l2() {
            return Err(Error::Unsupported(
                "Hessian products need the L2 regression loss; use the SGD trainer for smooth-L1".into(),
            ));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(invalid!("lambda must be finite and nonnegative, got {lambda}"));
        }
        check_batch(head, batch)?;
        let k = head.num_categories() + 1;
        let mut probs = vec![0.0; batch.len() * k];
        for i in 0..batch.len() {
            let x = batch.feature(i);
            let row = &mut probs[i * k..(i + 1) * k];
            for (c, p) in row.iter_mut().enumerate() {
                *p = affine(head.classifier_row(c), x);
            }
            softmax_in_place(row);
        }
        Ok(Self {
            head,
            batch,
            cfg: *cfg,
            lambda,
            probs,
        })
    }
}

impl LinearOperator for HessianOperator<'_> {
    fn dim(&self) -> usize {
        self.head.num_params()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let head = self.head;
        let n = self.batch.len();
        let inv_n = 1.0 / n as f64;
        let k = head.num_categories() + 1;
        let w = head.feature_dim() + 1;
        let cls_len = head.classifier().len();
        let (v_cls, v_reg) = v.split_at(cls_len);
        for (o, vi) in out.iter_mut().zip(v) {
            *o = self.lambda * vi;
        }
        let (o_cls, o_reg) = out.split_at_mut(cls_len);
        let cls_scale = self.cfg.cls_weight * inv_n;
        let loc_scale = self.cfg.loc_weight * inv_n * 2.0;
        let mut u = vec![0.0; k];

        for i in 0..n {
            let x = self.batch.feature(i);
            if cls_scale != 0.0 {
                // logit Hessian (diag(p) − p pᵀ) applied to u = V x̃
                let p = &self.probs[i * k..(i + 1) * k];
                let mut pu = 0.0;
                for c in 0..k {
                    u[c] = affine(&v_cls[c * w..(c + 1) * w], x);
                    pu += p[c] * u[c];
                }
                for c in 0..k {
                    let coeff = p[c] * (u[c] - pu);
                    add_scaled_input(&mut o_cls[c * w..(c + 1) * w], cls_scale * coeff, x);
                }
            }
            let label = self.batch.label(i);
            if label < 0 || loc_scale == 0.0 {
                continue;
            }
            for j in 0..4 {
                let row = 4 * label as usize + j;
                let q = affine(&v_reg[row * w..(row + 1) * w], x);
                add_scaled_input(&mut o_reg[row * w..(row + 1) * w], loc_scale * q, x);
            }
        }
    }
}

/// One-off `(H + λI)·v`; see [`HessianOperator`] for repeated products.
pub fn hessian_vec_product(
    head: &PredictorHead,
    batch: &Batch,
    v: &[f64],
    cfg: &LossConfig,
    lambda: f64,
) -> Result<Vec<f64>> {
    let op = HessianOperator::new(head, batch, cfg, lambda)?;
    if v.len() != op.dim() {
        return Err(invalid!("vector length {} != {} head weights", v.len(), op.dim()));
    }
    Ok(op.apply_vec(v))
}
