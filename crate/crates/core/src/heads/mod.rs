//! Linear predictor head: softmax classifier over `C + 1` categories
//! (background last) and a class-specific box regressor with 4 rows per
//! foreground category. Biases are folded in as a trailing weight column that
//! multiplies a constant 1.
//!
//! The flattened weight vector is the classifier block followed by the
//! regressor block, both row-major.

mod augment;
mod loss;
mod weights_file;

pub use augment::{augment, AugmentConfig};
pub use loss::{hessian_vec_product, loss_and_grad, loss_value, HessianOperator, LossConfig, LossValue, RegressionLoss};
pub use weights_file::{read_head, write_head, HEAD_MAGIC, HEAD_VERSION};

use rand_distr::{Distribution, Normal};

use crate::dataio::ProposalRecord;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorHead {
    num_categories: usize,
    feature_dim: usize,
    classifier: Vec<f64>,
    regressor: Vec<f64>,
}

/// Rows copied verbatim over a freshly initialized head.
///
/// Each row has `d + 1` entries (bias last). Regressor rows are given per
/// foreground category as a `4 × (d + 1)` block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WarmStart {
    pub classifier_rows: Vec<(usize, Vec<f64>)>,
    pub regressor_blocks: Vec<(usize, Vec<f64>)>,
}

impl PredictorHead {
    pub fn zeros(num_categories: usize, feature_dim: usize) -> Self {
        let w = feature_dim + 1;
        Self {
            num_categories,
            feature_dim,
            classifier: vec![0.0; (num_categories + 1) * w],
            regressor: vec![0.0; 4 * num_categories * w],
        }
    }

    pub fn from_parts(num_categories: usize, feature_dim: usize, classifier: Vec<f64>, regressor: Vec<f64>) -> Result<Self> {
        let head = Self::zeros(num_categories, feature_dim);
        if classifier.len() != head.classifier.len() || regressor.len() != head.regressor.len() {
            return Err(invalid!("weight blocks do not match C = {num_categories}, d = {feature_dim}"));
        }
        if classifier.iter().chain(&regressor).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite head weight".into()));
        }
        Ok(Self { classifier, regressor, ..head })
    }

    /// Foreground category count `C`.
    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Index of the background row.
    pub fn background(&self) -> usize {
        self.num_categories
    }

    pub fn num_params(&self) -> usize {
        self.classifier.len() + self.regressor.len()
    }

    pub fn classifier(&self) -> &[f64] {
        &self.classifier
    }

    pub fn regressor(&self) -> &[f64] {
        &self.regressor
    }

    pub fn classifier_mut(&mut self) -> &mut [f64] {
        &mut self.classifier
    }

    pub fn regressor_mut(&mut self) -> &mut [f64] {
        &mut self.regressor
    }

    pub fn classifier_row(&self, k: usize) -> &[f64] {
        let w = self.feature_dim + 1;
        &self.classifier[k * w..(k + 1) * w]
    }

    pub fn regressor_row(&self, r: usize) -> &[f64] {
        let w = self.feature_dim + 1;
        &self.regressor[r * w..(r + 1) * w]
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.classifier.clone();
        v.extend_from_slice(&self.regressor);
        v
    }

    pub fn set_flat(&mut self, w: &[f64]) -> Result<()> {
        if w.len() != self.num_params() {
            return Err(invalid!("flat weight length {} != {}", w.len(), self.num_params()));
        }
        let (a, b) = w.split_at(self.classifier.len());
        self.classifier.copy_from_slice(a);
        self.regressor.copy_from_slice(b);
        Ok(())
    }

    /// `w ← w + delta` over the flattened weights.
    pub fn add_flat(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.num_params() {
            return Err(invalid!("update length {} != {}", delta.len(), self.num_params()));
        }
        let (a, b) = delta.split_at(self.classifier.len());
        self.classifier.iter_mut().zip(a).for_each(|(w, d)| *w += d);
        self.regressor.iter_mut().zip(b).for_each(|(w, d)| *w += d);
        Ok(())
    }

    /// Class probabilities (`n × (C+1)`) and raw box deltas (`n × 4C`) for
    /// row-major features (`n × d`).
    pub fn forward(&self, features: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.feature_dim;
        if !features.len().is_multiple_of(d.max(1)) {
            return Err(invalid!("feature buffer length {} is not a multiple of d = {d}", features.len()));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite feature value at row {}", i / d)));
        }
        let n = features.len() / d;
        let k = self.num_categories + 1;
        let mut probs = vec![0.0; n * k];
        let mut deltas = vec![0.0; n * 4 * self.num_categories];
        for i in 0..n {
            let x = &features[i * d..(i + 1) * d];
            let row = &mut probs[i * k..(i + 1) * k];
            for (c, p) in row.iter_mut().enumerate() {
                *p = affine(self.classifier_row(c), x);
            }
            softmax_in_place(row);
            for (r, out) in deltas[i * 4 * self.num_categories..(i + 1) * 4 * self.num_categories]
                .iter_mut()
                .enumerate()
            {
                *out = affine(self.regressor_row(r), x);
            }
        }
        Ok((probs, deltas))
    }
}

/// `w[..d]·x + w[d]`
#[inline]
pub(crate) fn affine(w: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for j in 0..d {
        s += w[j] * x[j];
    }
    s + w[d]
}

/// `w[..d] += a·x; w[d] += a`
#[inline]
pub(crate) fn add_scaled_input(w: &mut [f64], a: f64, x: &[f64]) {
    let d = x.len();
    for j in 0..d {
        w[j] += a * x[j];
    }
    w[d] += a;
}

/// Max-subtracted softmax; returns log-sum-exp of the input.
pub(crate) fn softmax_in_place(z: &mut [f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
    m + total.ln()
}

/// Initializes every weight i.i.d. `N(0, std²)`, then overlays `warm_start`.
pub fn init_head(
    num_categories: usize,
    feature_dim: usize,
    std: f64,
    seed: u64,
    warm_start: Option<&WarmStart>,
) -> Result<PredictorHead> {
    if num_categories == 0 || feature_dim == 0 {
        return Err(invalid!("head needs C ≥ 1 and d ≥ 1"));
    }
    if !(std >= 0.0) || !std.is_finite() {
        return Err(invalid!("init std must be finite and nonnegative, got {std}"));
    }
    let mut head = PredictorHead::zeros(num_categories, feature_dim);
    if std > 0.0 {
        let dist = Normal::new(0.0, std).map_err(|e| invalid!("{e}"))?;
        let mut rng = crate::seed::rng(seed, 0x1417);
        for w in head.classifier.iter_mut().chain(head.regressor.iter_mut()) {
            *w = dist.sample(&mut rng);
        }
    }
    if let Some(ws) = warm_start {
        let w = feature_dim + 1;
        for (k, row) in &ws.classifier_rows {
            if *k > num_categories || row.len() != w {
                return Err(invalid!("warm-start classifier row {k} has wrong index or width {}", row.len()));
            }
            head.classifier[k * w..(k + 1) * w].copy_from_slice(row);
        }
        for (c, block) in &ws.regressor_blocks {
            if *c >= num_categories || block.len() != 4 * w {
                return Err(invalid!("warm-start regressor block {c} has wrong index or size {}", block.len()));
            }
            head.regressor[4 * c * w..4 * (c + 1) * w].copy_from_slice(block);
        }
    }
    Ok(head)
}

/// Labeled features prepared for loss evaluation.
///
/// Labels follow the record convention: `-1` is background, `0..C` index a
/// foreground category of the head. Targets are box deltas (zero for
/// background).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    feature_dim: usize,
    features: Vec<f64>,
    labels: Vec<i32>,
    targets: Vec<[f64; 4]>,
}

impl Batch {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            ..Default::default()
        }
    }

    pub fn push(&mut self, feature: &[f64], label: i32, target: [f64; 4]) -> Result<()> {
        if feature.len() != self.feature_dim {
            return Err(invalid!("feature length {} != {}", feature.len(), self.feature_dim));
        }
        self.features.extend_from_slice(feature);
        self.labels.push(label);
        self.targets.push(if label >= 0 { target } else { [0.0; 4] });
        Ok(())
    }

    /// Builds a batch from records; `label_of` maps a record to its head
    /// label (`-1` for background) or `None` to skip it.
    pub fn from_records<'a, I, F>(feature_dim: usize, records: I, mut label_of: F) -> Result<Self>
    where
        I: IntoIterator<Item = &'a ProposalRecord>,
        F: FnMut(&ProposalRecord) -> Option<i32>,
    {
        let mut batch = Self::new(feature_dim);
        let mut buf = Vec::with_capacity(feature_dim);
        for r in records {
            let Some(label) = label_of(r) else { continue };
            let target = if label >= 0 { r.regression_target()? } else { [0.0; 4] };
            buf.clear();
            buf.extend(r.feature.iter().map(|v| *v as f64));
            batch.push(&buf, label, target)?;
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn label(&self, i: usize) -> i32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn target(&self, i: usize) -> [f64; 4] {
        self.targets[i]
    }

    pub fn extend(&mut self, other: &Batch) -> Result<()> {
        if other.feature_dim != self.feature_dim {
            return Err(invalid!("cannot merge batches of different feature width"));
        }
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
        self.targets.extend_from_slice(&other.targets);
        Ok(())
    }

    /// Replaces every feature row; used by augmentation.
    pub(crate) fn with_features(&self, features: Vec<f64>, copies: usize) -> Self {
        Self {
            feature_dim: self.feature_dim,
            features,
            labels: self.labels.repeat(copies),
            targets: self.targets.repeat(copies),
        }
    }
}
