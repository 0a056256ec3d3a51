use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{train_full_batch, train_minibatch, train_sgd, NewtonConfig, SgdConfig, TrainingCurve, TrainingSet};
use crate::error::{Error, Result};
use crate::heads::{AugmentConfig, LossConfig, PredictorHead};

/// A training strategy with its resolved configuration.
pub trait Trainer: Send + Sync {
    fn name(&self) -> &str;

    /// Rejects loss configurations the strategy cannot optimize.
    fn check_loss(&self, loss: &LossConfig) -> Result<()>;

    /// Resolved configuration, for run manifests.
    fn config(&self) -> serde_json::Value;

    fn train(&self, head: PredictorHead, data: &TrainingSet, loss: &LossConfig) -> Result<(PredictorHead, TrainingCurve)>;
}

/// Overrides collected from the command line; unset fields fall back to each
/// strategy's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainerOptions {
    pub iterations: Option<usize>,
    pub n_cg: Option<usize>,
    pub lambda: Option<f64>,
    pub augment: Option<AugmentConfig>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_images: Option<usize>,
    pub eval_every: Option<usize>,
    pub seed: u64,
}

pub type TrainerFactory = fn(&TrainerOptions) -> Result<Box<dyn Trainer>>;

pub struct TrainerRegistry {
    factories: BTreeMap<String, TrainerFactory>,
}

impl fmt::Debug for TrainerRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for TrainerRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("newton", NewtonTrainer::full_batch);
        r.register("newton-mb", NewtonTrainer::minibatch);
        r.register("sgd", SgdTrainer::create);
        r
    }
}

impl TrainerRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// Adds or replaces a strategy.
    pub fn register(&mut self, name: impl Into<String>, factory: TrainerFactory) {
        self.factories.insert(name.into(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, options: &TrainerOptions) -> Result<Box<dyn Trainer>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            Error::Config(format!("unknown optimizer '{name}'; available: {}", self.names().join(", ")))
        })?;
        factory(options)
    }
}

struct NewtonTrainer {
    name: &'static str,
    minibatch: bool,
    cfg: NewtonConfig,
}

impl NewtonTrainer {
    fn resolve(name: &'static str, minibatch: bool, mut cfg: NewtonConfig, o: &TrainerOptions) -> Result<Box<dyn Trainer>> {
        if let Some(v) = o.iterations {
            cfg.num_iterations = v;
        }
        if let Some(v) = o.n_cg {
            cfg.n_cg = v;
        }
        if let Some(v) = o.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = o.batch_images {
            cfg.batch_images = v;
        }
        cfg.augment = o.augment;
        cfg.seed = o.seed;
        cfg.validate()?;
        Ok(Box::new(Self { name, minibatch, cfg }))
    }

    fn full_batch(o: &TrainerOptions) -> Result<Box<dyn Trainer>> {
        Self::resolve("newton", false, NewtonConfig::default(), o)
    }

    fn minibatch(o: &TrainerOptions) -> Result<Box<dyn Trainer>> {
        Self::resolve("newton-mb", true, NewtonConfig::minibatch(), o)
    }
}

impl Trainer for NewtonTrainer {
    fn name(&self) -> &str {
        self.name
    }

    fn check_loss(&self, loss: &LossConfig) -> Result<()> {
        loss.validate()?;
        if loss.is_l2() {
            Ok(())
        } else {
            Err(Error::Unsupported(format!(
                "optimizer '{}' needs the L2 regression loss; smooth-L1 is only available with sgd",
                self.name
            )))
        }
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).expect("config serializes")
    }

    fn train(&self, head: PredictorHead, data: &TrainingSet, loss: &LossConfig) -> Result<(PredictorHead, TrainingCurve)> {
        self.check_loss(loss)?;
        if self.minibatch {
            train_minibatch(head, data, loss, &self.cfg)
        } else {
            train_full_batch(head, data, loss, &self.cfg)
        }
    }
}

struct SgdTrainer {
    cfg: SgdConfig,
}

impl SgdTrainer {
    fn create(o: &TrainerOptions) -> Result<Box<dyn Trainer>> {
        let mut cfg = SgdConfig::default();
        if let Some(v) = o.iterations {
            cfg.num_iterations = v;
        }
        if let Some(v) = o.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = o.momentum {
            cfg.momentum = v;
        }
        if let Some(v) = o.batch_images {
            cfg.batch_images = v;
        }
        if let Some(v) = o.eval_every {
            cfg.eval_every = v;
        }
        cfg.seed = o.seed;
        cfg.validate()?;
        Ok(Box::new(Self { cfg }))
    }
}

impl Trainer for SgdTrainer {
    fn name(&self) -> &str {
        "sgd"
    }

    fn check_loss(&self, loss: &LossConfig) -> Result<()> {
        loss.validate()
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).expect("config serializes")
    }

    fn train(&self, head: PredictorHead, data: &TrainingSet, loss: &LossConfig) -> Result<(PredictorHead, TrainingCurve)> {
        train_sgd(head, data, loss, &self.cfg)
    }
}
