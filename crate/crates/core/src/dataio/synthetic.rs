//! Seeded Gaussian-cluster proposal features with planted structure.
//!
//! Every image holds one object. Its foreground proposals are jittered copies
//! of the ground-truth box (IoU ≥ 0.5) and its background proposals barely
//! touch it (IoU < 0.3). A proposal feature is
//! `mean[category] + box_encoding · target + σ·noise`, so both the class and
//! the box deltas are linearly recoverable. Novel categories with a planted
//! parent sit at distance `s` from the parent's mean, and the planted base
//! predictor sends them to that parent with the configured frequency.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{FeatureDataset, ProposalRecord};
use crate::detect::{decode_deltas, encode_deltas, iou, BBox};
use crate::error::{invalid, Result};
use crate::hierarchy::{ClassHierarchy, Slot};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Foreground categories; background proposals come on top.
    pub num_categories: usize,
    /// The first `num_base` categories are base categories.
    pub num_base: usize,
    pub shots_per_category: usize,
    pub test_shots_per_category: usize,
    pub feature_dim: usize,
    pub cluster_separation: f64,
    pub within_cluster_std: f64,
    /// Scale of the planted linear map from box deltas into features,
    /// relative to `within_cluster_std`.
    pub box_signal: f64,
    pub image_size: f64,
    pub proposals_per_object: usize,
    pub background_proposals_per_image: usize,
    pub base_outputs: bool,
    /// Planted parent per novel category (`None` = background). Empty means
    /// every novel category sits under background.
    pub novel_parents: Vec<Option<usize>>,
    /// Probability that the planted base predictor's argmax is the planted slot.
    pub planted_frequency: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_categories: 5,
            num_base: 0,
            shots_per_category: 10,
            test_shots_per_category: 10,
            feature_dim: 32,
            cluster_separation: 6.0,
            within_cluster_std: 1.0,
            box_signal: 5.0,
            image_size: 800.0,
            proposals_per_object: 4,
            background_proposals_per_image: 4,
            base_outputs: false,
            novel_parents: Vec::new(),
            planted_frequency: 0.95,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Fixed dataset used by the acceptance suite: 20 foreground categories
    /// (10 base, 10 novel of which 6 have a base parent), d = 256, 10 shots,
    /// 4 proposals per object, separation 6σ, seed 42.
    pub fn acceptance() -> Self {
        let sigma = 1.0;
        Self {
            num_categories: 20,
            num_base: 10,
            shots_per_category: 10,
            test_shots_per_category: 10,
            feature_dim: 256,
            cluster_separation: 6.0 * sigma,
            within_cluster_std: sigma,
            box_signal: 5.0,
            image_size: 800.0,
            proposals_per_object: 4,
            background_proposals_per_image: 4,
            base_outputs: true,
            novel_parents: vec![Some(0), Some(0), Some(0), Some(1), Some(1), Some(1), None, None, None, None],
            planted_frequency: 0.95,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_categories == 0
            || self.shots_per_category == 0
            || self.feature_dim == 0
            || self.proposals_per_object == 0
        {
            return Err(invalid!("synthetic counts must be at least 1"));
        }
        if self.num_base > self.num_categories {
            return Err(invalid!("num_base {} exceeds num_categories {}", self.num_base, self.num_categories));
        }
        if !(self.cluster_separation > 0.0) || !(self.within_cluster_std > 0.0) {
            return Err(invalid!("cluster_separation and within_cluster_std must be positive"));
        }
        if !(self.image_size >= 32.0) {
            return Err(invalid!("image_size must be at least 32"));
        }
        if !(self.box_signal >= 0.0) {
            return Err(invalid!("box_signal must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.planted_frequency) {
            return Err(invalid!("planted_frequency must lie in [0, 1]"));
        }
        if self.feature_dim < self.num_categories + 1 {
            return Err(invalid!(
                "feature_dim {} too small to place {} orthogonal cluster means",
                self.feature_dim,
                self.num_categories + 1
            ));
        }
        let num_novel = self.num_categories - self.num_base;
        if !self.novel_parents.is_empty() {
            if self.novel_parents.len() != num_novel {
                return Err(invalid!("novel_parents has {} entries for {num_novel} novel categories", self.novel_parents.len()));
            }
            if self.novel_parents.iter().flatten().any(|&p| p >= self.num_base) {
                return Err(invalid!("novel parent index out of base range"));
            }
        }
        Ok(())
    }

    fn parent(&self, novel: usize) -> Option<usize> {
        self.novel_parents.get(novel).copied().flatten()
    }

    pub fn category_names(&self) -> Vec<String> {
        (0..self.num_categories)
            .map(|c| {
                if c < self.num_base {
                    format!("base_{c:02}")
                } else {
                    format!("novel_{:02}", c - self.num_base)
                }
            })
            .collect()
    }
}

/// Ground truth behind a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedParameters {
    pub category_means: Vec<Vec<f64>>,
    pub background_mean: Vec<f64>,
    /// Row-major `d × 4` map from box deltas to feature offsets.
    pub box_encoding: Vec<f64>,
    pub hierarchy: ClassHierarchy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: FeatureDataset,
    pub test: FeatureDataset,
    pub planted: PlantedParameters,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn orthonormal_directions(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        for q in &basis {
            let proj: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= proj * qi;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

fn to_f32_box(b: &BBox) -> [f32; 4] {
    [b.x1 as f32, b.y1 as f32, b.x2 as f32, b.y2 as f32]
}

fn from_f32_box(b: &[f32; 4]) -> BBox {
    BBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64)
}

fn clamp_box(b: BBox, size: f64) -> BBox {
    let x1 = b.x1.clamp(0.0, size - 2.0);
    let y1 = b.y1.clamp(0.0, size - 2.0);
    BBox::new(x1, y1, b.x2.clamp(x1 + 1.0, size), b.y2.clamp(y1 + 1.0, size))
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    means: Vec<Vec<f64>>,
    background_mean: Vec<f64>,
    box_encoding: Vec<f64>,
}

impl Generator<'_> {
    fn feature(&self, rng: &mut ChaCha8Rng, mean: &[f64], target: Option<[f64; 4]>) -> Vec<f32> {
        let d = self.cfg.feature_dim;
        let sigma = self.cfg.within_cluster_std;
        (0..d)
            .map(|j| {
                let mut v = mean[j] + sigma * normal(rng);
                if let Some(t) = target {
                    for (k, tk) in t.iter().enumerate() {
                        v += self.box_encoding[j * 4 + k] * tk;
                    }
                }
                v as f32
            })
            .collect()
    }

    fn gt_box(&self, rng: &mut ChaCha8Rng) -> BBox {
        let s = self.cfg.image_size;
        let w = s * rng.random_range(0.15..0.45);
        let h = s * rng.random_range(0.15..0.45);
        let x1 = rng.random_range(0.0..(s - w));
        let y1 = rng.random_range(0.0..(s - h));
        BBox::new(x1, y1, x1 + w, y1 + h)
    }

    fn foreground_proposal(&self, rng: &mut ChaCha8Rng, gt: &BBox) -> BBox {
        for _ in 0..100 {
            let (cx, cy) = gt.center();
            let cx = cx + 0.08 * gt.width() * normal(rng);
            let cy = cy + 0.08 * gt.height() * normal(rng);
            let w = gt.width() * (0.1 * normal(rng)).exp();
            let h = gt.height() * (0.1 * normal(rng)).exp();
            let b = clamp_box(BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0), self.cfg.image_size);
            if iou(&b, gt) >= 0.5 {
                return b;
            }
        }
        *gt
    }

    fn background_proposal(&self, rng: &mut ChaCha8Rng, gt: &BBox) -> BBox {
        let s = self.cfg.image_size;
        for _ in 0..100 {
            let w = s * rng.random_range(0.05..0.4);
            let h = s * rng.random_range(0.05..0.4);
            let x1 = rng.random_range(0.0..(s - w));
            let y1 = rng.random_range(0.0..(s - h));
            let b = BBox::new(x1, y1, x1 + w, y1 + h);
            if iou(&b, gt) < 0.3 {
                return b;
            }
        }
        // a corner box away from the object
        let far_x = if gt.center().0 > s / 2.0 { 0.0 } else { s - 16.0 };
        BBox::new(far_x, 0.0, far_x + 16.0, 16.0)
    }

    /// Planted base predictor output for a proposal whose intended base slot
    /// is `slot` (`B` = background).
    fn base_outputs(
        &self,
        rng: &mut ChaCha8Rng,
        slot: usize,
        proposal: &BBox,
        refine_toward: Option<(usize, [f64; 4])>,
    ) -> (Vec<f32>, Vec<f32>) {
        let b = self.cfg.num_base;
        let mut winner = slot;
        if b > 0 && rng.random::<f64>() >= self.cfg.planted_frequency {
            let k = rng.random_range(0..b);
            winner = if k >= slot { k + 1 } else { k };
        }
        let mut logits: Vec<f64> = (0..=b).map(|_| normal(rng)).collect();
        let runner_up = logits
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != winner)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if runner_up.is_finite() {
            logits[winner] = runner_up + rng.random_range(2.0..6.0);
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        let scores = exps.iter().map(|e| (e / total) as f32).collect();

        let mut boxes = Vec::with_capacity(4 * b);
        for j in 0..b {
            let mut delta = [0.0; 4];
            for v in delta.iter_mut() {
                *v = 0.02 * normal(rng);
            }
            if let Some((cat, t)) = refine_toward {
                if cat == j {
                    for k in 0..4 {
                        delta[k] += 0.8 * t[k];
                    }
                }
            }
            let refined = decode_deltas(&delta, proposal).expect("proposal boxes are valid");
            boxes.extend_from_slice(&to_f32_box(&clamp_box(refined, self.cfg.image_size)));
        }
        (scores, boxes)
    }

    fn split(&self, rng: &mut ChaCha8Rng, shots: usize) -> FeatureDataset {
        let cfg = self.cfg;
        let mut ds = FeatureDataset::empty(cfg.feature_dim, cfg.category_names(), cfg.num_base);
        ds.has_base_outputs = cfg.base_outputs;
        let mut image_id = 0u32;
        for _ in 0..shots {
            for cat in 0..cfg.num_categories {
                let gt = self.gt_box(rng);
                let gt32 = to_f32_box(&gt);
                let gt_q = from_f32_box(&gt32);
                let base_slot = if cat < cfg.num_base {
                    cat
                } else {
                    self.cfg.parent(cat - cfg.num_base).unwrap_or(cfg.num_base)
                };
                for _ in 0..cfg.proposals_per_object {
                    let p32 = to_f32_box(&self.foreground_proposal(rng, &gt));
                    let p = from_f32_box(&p32);
                    let target = encode_deltas(&gt_q, &p).expect("valid boxes");
                    let feature = self.feature(rng, &self.means[cat], Some(target));
                    let (base_scores, base_boxes) = if cfg.base_outputs {
                        let refine = (cat < cfg.num_base).then_some((cat, target));
                        let (s, b) = self.base_outputs(rng, base_slot, &p, refine);
                        (Some(s), Some(b))
                    } else {
                        (None, None)
                    };
                    ds.records.push(ProposalRecord {
                        image_id,
                        proposal_box: p32,
                        label: cat as i32,
                        gt_box: gt32,
                        base_scores,
                        base_boxes,
                        feature,
                    });
                }
                for _ in 0..cfg.background_proposals_per_image {
                    let p32 = to_f32_box(&self.background_proposal(rng, &gt));
                    let p = from_f32_box(&p32);
                    let feature = self.feature(rng, &self.background_mean, None);
                    let (base_scores, base_boxes) = if cfg.base_outputs {
                        let (s, b) = self.base_outputs(rng, cfg.num_base, &p, None);
                        (Some(s), Some(b))
                    } else {
                        (None, None)
                    };
                    ds.records.push(ProposalRecord {
                        image_id,
                        proposal_box: p32,
                        label: -1,
                        gt_box: [0.0; 4],
                        base_scores,
                        base_boxes,
                        feature,
                    });
                }
                image_id += 1;
            }
        }
        ds
    }
}

/// Generates train and test splits. A pure function of `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let d = cfg.feature_dim;
    let s = cfg.cluster_separation;
    let mut rng = seed::rng(cfg.seed, 1);
    let dirs = orthonormal_directions(&mut rng, cfg.num_categories + 1, d);

    // Independent slots at s/√2 along orthonormal directions are pairwise s
    // apart; children sit s away from their parent along a fresh direction.
    let scale = s / std::f64::consts::SQRT_2;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_categories);
    for c in 0..cfg.num_categories {
        let parent = if c >= cfg.num_base { cfg.parent(c - cfg.num_base) } else { None };
        let m = match parent {
            Some(p) => means[p].iter().zip(&dirs[c]).map(|(a, q)| a + s * q).collect(),
            None => dirs[c].iter().map(|q| scale * q).collect(),
        };
        means.push(m);
    }
    let background_mean: Vec<f64> = dirs[cfg.num_categories].iter().map(|q| scale * q).collect();

    let mut rng = seed::rng(cfg.seed, 2);
    let enc_std = cfg.box_signal * cfg.within_cluster_std;
    let box_encoding: Vec<f64> = (0..d * 4).map(|_| enc_std * normal(&mut rng)).collect();

    let gen = Generator {
        cfg,
        means,
        background_mean,
        box_encoding,
    };
    let train = gen.split(&mut seed::rng(cfg.seed, 3), cfg.shots_per_category);
    let test = gen.split(&mut seed::rng(cfg.seed, 4), cfg.test_shots_per_category);

    let names = cfg.category_names();
    let novel: Vec<(String, Slot)> = names[cfg.num_base..]
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), cfg.parent(i).map_or(Slot::Background, Slot::Base)))
        .collect();
    let hierarchy = ClassHierarchy::from_slots(names[..cfg.num_base].to_vec(), novel)?;

    Ok(SyntheticData {
        train,
        test,
        planted: PlantedParameters {
            category_means: gen.means,
            background_mean: gen.background_mean,
            box_encoding: gen.box_encoding,
            hierarchy,
        },
    })
}
