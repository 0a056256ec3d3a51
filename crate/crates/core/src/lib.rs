//! Post-backbone half of a few-shot object detector.
//!
//! Cached proposal features are consumed by convex linear predictor heads
//! (softmax classifier plus class-specific box regressor). Heads are trained
//! with a truncated Newton method whose inner linear system is solved by a
//! fixed number of conjugate gradient steps, or with momentum SGD as a
//! baseline. At inference a frozen base predictor emits base detections first;
//! the leftover proposals are routed by the base argmax into groups, and each
//! group is re-classified by its own novel head. Base detections are never
//! affected by the novel heads.
//!
//! Modules:
//! - [`linalg`]: dense kernels and the CG solver
//! - [`detect`]: boxes, delta coding, IoU, NMS, post-processing
//! - [`dataio`]: binary feature datasets, hierarchy and detection files,
//!   seeded synthetic data
//! - [`heads`]: predictor head, loss, gradient, Hessian-vector products,
//!   feature augmentation
//! - [`optim`]: training strategies behind the [`optim::Trainer`] trait
//! - [`hierarchy`]: class hierarchy, routing, HDA inference, auto-assignment
//! - [`eval`]: matching, COCO-style AP, convergence reports

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod detect;
pub mod error;
pub mod eval;
pub mod heads;
pub mod hierarchy;
pub mod linalg;
pub mod optim;
pub(crate) mod seed;

pub use error::{Error, FormatErrorKind, Result};
