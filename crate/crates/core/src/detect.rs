//! Box geometry and Faster R-CNN style post-processing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Largest log-scale delta accepted by [`decode_deltas`].
pub const DELTA_LOG_CLAMP: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

/// Corner-format box in absolute pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(c: [f64; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn try_new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self::new(x1, y1, x2, y2);
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(invalid!("degenerate box {:?}", self.to_array()))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.x2 > self.x1 && self.y2 > self.y1
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x1 + 0.5 * self.width(), self.y1 + 0.5 * self.height())
    }
}

/// Regression target `(tx, ty, tw, th)` of `gt` relative to `anchor`.
pub fn encode_deltas(gt: &BBox, anchor: &BBox) -> Result<[f64; 4]> {
    if !(anchor.width() > 0.0 && anchor.height() > 0.0) {
        return Err(invalid!("anchor has non-positive size: {:?}", anchor.to_array()));
    }
    if !(gt.width() > 0.0 && gt.height() > 0.0) {
        return Err(invalid!("target box has non-positive size: {:?}", gt.to_array()));
    }
    let (ax, ay) = anchor.center();
    let (gx, gy) = gt.center();
    Ok([
        (gx - ax) / anchor.width(),
        (gy - ay) / anchor.height(),
        (gt.width() / anchor.width()).ln(),
        (gt.height() / anchor.height()).ln(),
    ])
}

/// Inverse of [`encode_deltas`]; log-scale deltas are clamped to
/// [`DELTA_LOG_CLAMP`] before exponentiation.
pub fn decode_deltas(deltas: &[f64; 4], anchor: &BBox) -> Result<BBox> {
    if !(anchor.width() > 0.0 && anchor.height() > 0.0) {
        return Err(invalid!("anchor has non-positive size: {:?}", anchor.to_array()));
    }
    let (ax, ay) = anchor.center();
    let cx = ax + deltas[0] * anchor.width();
    let cy = ay + deltas[1] * anchor.height();
    let w = anchor.width() * deltas[2].min(DELTA_LOG_CLAMP).exp();
    let h = anchor.height() * deltas[3].min(DELTA_LOG_CLAMP).exp();
    Ok(BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h))
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.area() + b.area() - inter)
}

/// Greedy NMS over one category. Returns kept input indices in keep order
/// (descending score, ties by lower index).
pub fn nms(candidates: &[(f64, BBox)], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&i, &j| candidates[j].0.total_cmp(&candidates[i].0).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let bx = &candidates[i].1;
        if kept.iter().all(|&k| iou(&candidates[k].1, bx) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostProcessConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub topk_per_image: usize,
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.05,
            nms_iou: 0.5,
            topk_per_image: 100,
        }
    }
}

impl PostProcessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_threshold) || !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(invalid!("post-process thresholds must lie in [0, 1]"));
        }
        if self.topk_per_image == 0 {
            return Err(invalid!("topk_per_image must be at least 1"));
        }
        Ok(())
    }
}

/// One emitted detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u32,
    pub category: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Sorts by image id, category name, descending score, then box coordinates.
pub fn canonical_order(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        a.image_id
            .cmp(&b.image_id)
            .then_with(|| a.category.cmp(&b.category))
            .then_with(|| b.score.total_cmp(&a.score))
            .then_with(|| {
                a.bbox
                    .to_array()
                    .iter()
                    .zip(b.bbox.to_array().iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
}

/// Per-proposal scores and decoded boxes over a set of emitting categories.
///
/// `scores` and `boxes` are row-major `n × categories.len()`.
#[derive(Debug, Clone, Copy)]
pub struct ScoredProposals<'a> {
    pub image_ids: &'a [u32],
    pub categories: &'a [String],
    pub scores: &'a [f64],
    pub boxes: &'a [BBox],
}

impl ScoredProposals<'_> {
    fn check(&self) -> Result<()> {
        let n = self.image_ids.len();
        let k = self.categories.len();
        if self.scores.len() != n * k || self.boxes.len() != n * k {
            return Err(invalid!(
                "post-process: {} scores and {} boxes for {n} proposals x {k} categories",
                self.scores.len(),
                self.boxes.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PostProcessOutput {
    pub detections: Vec<Detection>,
    /// Source proposal of each detection, aligned with `detections`.
    pub sources: Vec<usize>,
    /// Proposals contributing at least one kept detection.
    pub consumed: BTreeSet<usize>,
}

/// Score threshold, per-category greedy NMS, then per-image top-k.
///
/// NMS runs per category within each image. The top-k pool is ordered by
/// descending score, ties by category index then proposal index; output keeps
/// that order within each image, images ascending.
pub fn postprocess(input: &ScoredProposals<'_>, cfg: &PostProcessConfig) -> Result<PostProcessOutput> {
    input.check()?;
    cfg.validate()?;
    let k = input.categories.len();

    // (image, category) -> proposal indices, in proposal order
    let mut buckets: BTreeMap<(u32, usize), Vec<usize>> = BTreeMap::new();
    for (p, &img) in input.image_ids.iter().enumerate() {
        for c in 0..k {
            if input.scores[p * k + c] > cfg.score_threshold {
                buckets.entry((img, c)).or_default().push(p);
            }
        }
    }

    let mut per_image: BTreeMap<u32, Vec<(f64, usize, usize)>> = BTreeMap::new();
    for ((img, c), props) in buckets {
        let cands: Vec<(f64, BBox)> = props
            .iter()
            .map(|&p| (input.scores[p * k + c], input.boxes[p * k + c]))
            .collect();
        let pool = per_image.entry(img).or_default();
        for idx in nms(&cands, cfg.nms_iou) {
            pool.push((cands[idx].0, c, props[idx]));
        }
    }

    let mut out = PostProcessOutput::default();
    for (img, mut pool) in per_image {
        pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        pool.truncate(cfg.topk_per_image);
        for (score, c, p) in pool {
            out.detections.push(Detection {
                image_id: img,
                category: input.categories[c].clone(),
                score,
                bbox: input.boxes[p * k + c],
            });
            out.sources.push(p);
            out.consumed.insert(p);
        }
    }
    Ok(out)
}
