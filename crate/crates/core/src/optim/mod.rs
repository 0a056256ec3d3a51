//! Training strategies for a [`PredictorHead`].
//!
//! Every strategy implements [`Trainer`] and is looked up by name in a
//! [`TrainerRegistry`]. The built-in names are `newton` (full-batch
//! Newton-CG), `newton-mb` (regularized mini-batch Newton-CG) and `sgd`
//! (momentum SGD).

mod curve;
mod newton;
mod registry;
mod sgd;

use std::collections::BTreeMap;

pub use curve::{CurvePoint, TrainingCurve};
pub use newton::{newton_direction, newton_step, train_full_batch, train_minibatch, NewtonConfig, NewtonDiagnostics};
pub use registry::{Trainer, TrainerOptions, TrainerRegistry};
pub use sgd::{train_sgd, SgdConfig};

use crate::dataio::ProposalRecord;
use crate::error::{invalid, Result};
use crate::heads::{loss_and_grad, Batch, HessianOperator, LossConfig, PredictorHead};
use crate::linalg::LinearOperator;

/// An objective expanded at a fixed point: value, gradient and curvature.
pub trait TwiceDifferentiable {
    fn value_and_grad(&self) -> Result<(f64, Vec<f64>)>;
    /// `H + λI` at the expansion point.
    fn hessian<'a>(&'a self, lambda: f64) -> Result<Box<dyn LinearOperator + 'a>>;
}

/// Head loss on one batch at the head's current weights.
pub struct HeadObjective<'a> {
    pub head: &'a PredictorHead,
    pub batch: &'a Batch,
    pub loss: &'a LossConfig,
}

impl TwiceDifferentiable for HeadObjective<'_> {
    fn value_and_grad(&self) -> Result<(f64, Vec<f64>)> {
        let (v, g) = loss_and_grad(self.head, self.batch, self.loss)?;
        Ok((v.total, g))
    }

    fn hessian<'a>(&'a self, lambda: f64) -> Result<Box<dyn LinearOperator + 'a>> {
        Ok(Box::new(HessianOperator::new(self.head, self.batch, self.loss, lambda)?))
    }
}

/// Training records with their image ids, for image-level mini-batching.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    batch: Batch,
    image_ids: Vec<u32>,
    by_image: BTreeMap<u32, Vec<usize>>,
}

impl TrainingSet {
    pub fn new(batch: Batch, image_ids: Vec<u32>) -> Result<Self> {
        if image_ids.len() != batch.len() {
            return Err(invalid!("{} image ids for {} records", image_ids.len(), batch.len()));
        }
        let mut by_image: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, id) in image_ids.iter().enumerate() {
            by_image.entry(*id).or_default().push(i);
        }
        Ok(Self { batch, image_ids, by_image })
    }

    /// Same label convention as [`Batch::from_records`].
    pub fn from_records<'a, I, F>(feature_dim: usize, records: I, mut label_of: F) -> Result<Self>
    where
        I: IntoIterator<Item = &'a ProposalRecord>,
        F: FnMut(&ProposalRecord) -> Option<i32>,
    {
        let mut batch = Batch::new(feature_dim);
        let mut ids = Vec::new();
        let mut buf = Vec::with_capacity(feature_dim);
        for r in records {
            let Some(label) = label_of(r) else { continue };
            let target = if label >= 0 { r.regression_target()? } else { [0.0; 4] };
            buf.clear();
            buf.extend(r.feature.iter().map(|v| *v as f64));
            batch.push(&buf, label, target)?;
            ids.push(r.image_id);
        }
        Self::new(batch, ids)
    }

    pub fn batch(&self) -> &Batch {
        &self.batch
    }

    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }

    pub fn image_ids(&self) -> &[u32] {
        &self.image_ids
    }

    pub fn num_images(&self) -> usize {
        self.by_image.len()
    }

    /// Samples up to `count` distinct images uniformly without replacement
    /// and gathers their records in ascending image order.
    pub fn sample_images(&self, count: usize, seed: u64) -> Batch {
        let images: Vec<&Vec<usize>> = self.by_image.values().collect();
        let mut picked: Vec<usize> = if count >= images.len() {
            (0..images.len()).collect()
        } else {
            let mut rng = crate::seed::rng(seed, 0x5a3);
            rand::seq::index::sample(&mut rng, images.len(), count).into_vec()
        };
        picked.sort_unstable();
        let mut out = Batch::new(self.batch.feature_dim());
        for p in picked {
            for &i in images[p] {
                out.push(self.batch.feature(i), self.batch.label(i), self.batch.target(i))
                    .expect("widths match");
            }
        }
        out
    }
}
