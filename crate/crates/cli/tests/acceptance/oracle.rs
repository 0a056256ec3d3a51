//! Long-run full-batch gradient descent on the acceptance training set.
//!
//! Too slow for every test run, so the result is cached in
//! `tests/data/gd_oracle.json` and recomputed only on request.

use std::path::Path;
use std::time::Instant;

use fsdet::heads::{loss_and_grad, loss_value, LossConfig, PredictorHead};
use fsdet::optim::TrainingSet;
use serde::{Deserialize, Serialize};

pub const ORACLE_STEPS: usize = 200_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GdOracle {
    pub steps: usize,
    pub step_classifier: f64,
    pub step_regressor: f64,
    /// Loss of the zero head, to detect a changed dataset.
    pub initial_loss: f64,
    pub checkpoints: Vec<(usize, f64)>,
    pub optimal_loss: f64,
}

/// Largest eigenvalue of `(1/N) Σ x̃ x̃ᵀ` by power iteration.
fn gram_lambda_max(data: &TrainingSet) -> f64 {
    let b = data.batch();
    let d = b.feature_dim();
    let w = d + 1;
    let mut gram = vec![0.0; w * w];
    let mut xt = vec![1.0; w];
    for i in 0..b.len() {
        xt[..d].copy_from_slice(b.feature(i));
        for r in 0..w {
            for c in 0..w {
                gram[r * w + c] += xt[r] * xt[c];
            }
        }
    }
    gram.iter_mut().for_each(|g| *g /= b.len() as f64);
    let mut v = vec![1.0 / (w as f64).sqrt(); w];
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let mut nv = vec![0.0; w];
        for r in 0..w {
            nv[r] = (0..w).map(|c| gram[r * w + c] * v[c]).sum();
        }
        lambda = nv.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = nv.iter().map(|x| x / lambda).collect();
    }
    lambda
}

/// Per-block steps `1/L`: the softmax logit Hessian is bounded by `½I` and
/// the squared-error Hessian by `2I` times the feature Gram matrix.
pub fn run(data: &TrainingSet, num_categories: usize, steps: usize) -> GdOracle {
    let loss = LossConfig::default();
    let lam = gram_lambda_max(data);
    let (step_classifier, step_regressor) = (1.0 / (0.5 * lam), 1.0 / (2.0 * lam));
    let mut head = PredictorHead::zeros(num_categories, data.batch().feature_dim());
    let cls_len = head.classifier().len();
    let initial_loss = loss_value(&head, data.batch(), &loss).unwrap().total;
    let mut checkpoints = Vec::new();
    let t0 = Instant::now();
    for it in 0..steps {
        let (v, g) = loss_and_grad(&head, data.batch(), &loss).unwrap();
        if it % 10_000 == 0 {
            eprintln!("gd oracle: step {it} loss {:.6e} ({:.0}s)", v.total, t0.elapsed().as_secs_f64());
            checkpoints.push((it, v.total));
        }
        let step: Vec<f64> = g
            .iter()
            .enumerate()
            .map(|(i, gi)| -gi * if i < cls_len { step_classifier } else { step_regressor })
            .collect();
        head.add_flat(&step).unwrap();
    }
    let optimal_loss = loss_value(&head, data.batch(), &loss).unwrap().total;
    checkpoints.push((steps, optimal_loss));
    GdOracle {
        steps,
        step_classifier,
        step_regressor,
        initial_loss,
        checkpoints,
        optimal_loss,
    }
}

pub fn load(path: &Path) -> Option<GdOracle> {
    serde_json::from_str(&std::fs::read_to_string(path).ok()?).ok()
}

pub fn save(oracle: &GdOracle, path: &Path) {
    std::fs::write(path, serde_json::to_string_pretty(oracle).unwrap() + "\n").unwrap();
}
