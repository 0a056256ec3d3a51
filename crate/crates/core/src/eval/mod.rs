//! COCO-style detection metrics and convergence reports.

mod convergence;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use convergence::{convergence_report, mean_ci, ConvergenceEntry, ConvergenceReport, SpeedupRatio};

use crate::dataio::FeatureDataset;
use crate::detect::{iou, BBox, Detection};
use crate::error::{Error, Result};

/// `0.50, 0.55, …, 0.95`
pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Greedy matching of score-sorted detections against ground truth.
///
/// Each detection takes the still-unmatched ground truth of highest IoU
/// (lowest index on ties) if that IoU reaches `threshold`.
pub fn match_detections(dets: &[BBox], gts: &[BBox], threshold: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let o = iou(d, gt);
                if o >= threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// 101-point interpolated AP over `(score, is_tp)` pairs.
///
/// Pairs are ranked by descending score, ties keeping input order. Returns 0
/// when `num_gt` is 0.
pub fn average_precision(scored: &[(f64, bool)], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    for i in order {
        if scored[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / 101.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub category: String,
    pub num_gt: usize,
    /// One entry per threshold of [`iou_thresholds`].
    pub ap_per_threshold: Vec<f64>,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

/// Means over categories with at least one ground-truth box; `None` when a
/// split has no such category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub num_categories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub iou_thresholds: Vec<f64>,
    pub categories: Vec<CategoryAp>,
    pub overall: ApSummary,
    pub splits: BTreeMap<String, ApSummary>,
}

fn summarize<'a>(cats: impl Iterator<Item = &'a CategoryAp>) -> ApSummary {
    let scored: Vec<&CategoryAp> = cats.filter(|c| c.num_gt > 0).collect();
    let n = scored.len();
    let mean = |f: fn(&CategoryAp) -> f64| (n > 0).then(|| scored.iter().map(|c| f(c)).sum::<f64>() / n as f64);
    ApSummary {
        ap: mean(|c| c.ap),
        ap50: mean(|c| c.ap50),
        ap75: mean(|c| c.ap75),
        num_categories: n,
    }
}

/// Default splits of a dataset: `base` and `novel`.
pub fn default_splits(ds: &FeatureDataset) -> Vec<(String, Vec<String>)> {
    vec![
        ("base".into(), ds.base_names().to_vec()),
        ("novel".into(), ds.novel_names().to_vec()),
    ]
}

/// Ground truth comes from the foreground records of `gt`, one box per
/// distinct `(image, category, gt_box)`.
pub fn evaluate(dets: &[Detection], gt: &FeatureDataset, splits: &[(String, Vec<String>)]) -> Result<EvalResult> {
    let names = &gt.category_names;
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    for (split, members) in splits {
        if let Some(m) = members.iter().find(|m| !index.contains_key(m.as_str())) {
            return Err(Error::Validation(format!("split '{split}' names unknown category '{m}'")));
        }
    }

    // category -> image -> boxes
    let mut gts: Vec<BTreeMap<u32, Vec<BBox>>> = vec![BTreeMap::new(); names.len()];
    for r in &gt.records {
        let Some(c) = r.category() else { continue };
        let boxes = gts[c].entry(r.image_id).or_default();
        let b = r.gt_bbox();
        if !boxes.contains(&b) {
            boxes.push(b);
        }
    }

    let mut per_cat: Vec<Vec<(usize, &Detection)>> = vec![Vec::new(); names.len()];
    for (i, d) in dets.iter().enumerate() {
        let c = *index
            .get(d.category.as_str())
            .ok_or_else(|| Error::Validation(format!("detection {i} has unknown category '{}'", d.category)))?;
        per_cat[c].push((i, d));
    }

    let thresholds = iou_thresholds();
    let mut categories = Vec::with_capacity(names.len());
    for (c, name) in names.iter().enumerate() {
        let mut cd = std::mem::take(&mut per_cat[c]);
        cd.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
        let num_gt: usize = gts[c].values().map(Vec::len).sum();
        let mut by_image: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (rank, (_, d)) in cd.iter().enumerate() {
            by_image.entry(d.image_id).or_default().push(rank);
        }
        let ap_per_threshold: Vec<f64> = thresholds
            .iter()
            .map(|&t| {
                let mut flags = vec![false; cd.len()];
                for (img, ranks) in &by_image {
                    let Some(g) = gts[c].get(img) else { continue };
                    let boxes: Vec<BBox> = ranks.iter().map(|&r| cd[r].1.bbox).collect();
                    for (r, tp) in ranks.iter().zip(match_detections(&boxes, g, t)) {
                        flags[*r] = tp;
                    }
                }
                let scored: Vec<(f64, bool)> = cd.iter().zip(flags).map(|((_, d), f)| (d.score, f)).collect();
                average_precision(&scored, num_gt)
            })
            .collect();
        categories.push(CategoryAp {
            category: name.clone(),
            num_gt,
            ap: ap_per_threshold.iter().sum::<f64>() / thresholds.len() as f64,
            ap50: ap_per_threshold[0],
            ap75: ap_per_threshold[5],
            ap_per_threshold,
        });
    }

    let overall = summarize(categories.iter());
    let splits = splits
        .iter()
        .map(|(s, members)| (s.clone(), summarize(categories.iter().filter(|c| members.contains(&c.category)))))
        .collect();
    Ok(EvalResult {
        iou_thresholds: thresholds,
        categories,
        overall,
        splits,
    })
}
