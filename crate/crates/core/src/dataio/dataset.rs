use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::{encode_deltas, BBox};
use crate::error::{invalid, Error, FormatErrorKind, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"FSFD";
pub const DATASET_VERSION: u32 = 1;

/// One cached region proposal.
///
/// Label `-1` marks background (or unlabeled); `gt_box` is all zeros then.
/// `base_scores` holds `B + 1` post-softmax probabilities with background
/// last, `base_boxes` holds `4·B` decoded corner coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalRecord {
    pub image_id: u32,
    pub proposal_box: [f32; 4],
    pub label: i32,
    pub gt_box: [f32; 4],
    pub base_scores: Option<Vec<f32>>,
    pub base_boxes: Option<Vec<f32>>,
    pub feature: Vec<f32>,
}

fn to_bbox(c: &[f32]) -> BBox {
    BBox::new(c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64)
}

impl ProposalRecord {
    pub fn proposal_bbox(&self) -> BBox {
        to_bbox(&self.proposal_box)
    }

    pub fn gt_bbox(&self) -> BBox {
        to_bbox(&self.gt_box)
    }

    pub fn is_foreground(&self) -> bool {
        self.label >= 0
    }

    /// Category index when foreground.
    pub fn category(&self) -> Option<usize> {
        usize::try_from(self.label).ok()
    }

    /// Refined box the base predictor assigns to base category `b`.
    pub fn base_box(&self, b: usize) -> Option<BBox> {
        self.base_boxes
            .as_ref()
            .and_then(|bb| bb.get(4 * b..4 * b + 4))
            .map(to_bbox)
    }

    /// Box-delta regression target of the ground truth w.r.t. the proposal.
    pub fn regression_target(&self) -> Result<[f64; 4]> {
        encode_deltas(&self.gt_bbox(), &self.proposal_bbox())
    }

    /// Index of the highest base score, lowest index on ties.
    pub fn base_argmax(&self) -> Option<usize> {
        let s = self.base_scores.as_ref()?;
        let mut best = 0;
        for (i, v) in s.iter().enumerate() {
            if *v > s[best] {
                best = i;
            }
        }
        Some(best)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    feature_dim: usize,
    num_base: usize,
    category_names: Vec<String>,
    num_records: usize,
    has_labels: bool,
    has_base_outputs: bool,
}

/// A set of proposal records sharing one header.
///
/// The first `num_base` entries of `category_names` are the base categories.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub feature_dim: usize,
    pub num_base: usize,
    pub category_names: Vec<String>,
    pub has_labels: bool,
    pub has_base_outputs: bool,
    pub records: Vec<ProposalRecord>,
}

impl FeatureDataset {
    pub fn empty(feature_dim: usize, category_names: Vec<String>, num_base: usize) -> Self {
        Self {
            feature_dim,
            num_base,
            category_names,
            has_labels: true,
            has_base_outputs: false,
            records: Vec::new(),
        }
    }

    pub fn base_names(&self) -> &[String] {
        &self.category_names[..self.num_base.min(self.category_names.len())]
    }

    pub fn novel_names(&self) -> &[String] {
        &self.category_names[self.num_base.min(self.category_names.len())..]
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.category_names.iter().position(|n| n == name)
    }

    /// Distinct image ids in ascending order.
    pub fn image_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.records.iter().map(|r| r.image_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn record_len(&self) -> usize {
        let base = if self.has_base_outputs {
            4 * (self.num_base + 1) + 16 * self.num_base
        } else {
            0
        };
        4 + 16 + 4 + 16 + base + 4 * self.feature_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_base > self.category_names.len() {
            return Err(Error::Validation(format!(
                "num_base {} exceeds {} categories",
                self.num_base,
                self.category_names.len()
            )));
        }
        let ncat = self.category_names.len() as i64;
        for (i, r) in self.records.iter().enumerate() {
            let fail = |msg: String| Err(Error::Validation(format!("record {i}: {msg}")));
            if r.feature.len() != self.feature_dim {
                return fail(format!("feature length {} != {}", r.feature.len(), self.feature_dim));
            }
            if r.label < -1 || (r.label as i64) >= ncat {
                return fail(format!("label {} out of range", r.label));
            }
            if !r.proposal_bbox().is_valid() {
                return fail("degenerate proposal box".into());
            }
            if r.label >= 0 && !r.gt_bbox().is_valid() {
                return fail("degenerate ground-truth box".into());
            }
            match (&r.base_scores, &r.base_boxes, self.has_base_outputs) {
                (Some(s), Some(b), true) => {
                    if s.len() != self.num_base + 1 || b.len() != 4 * self.num_base {
                        return fail("base output length mismatch".into());
                    }
                    if s.iter().any(|v| !(*v >= 0.0)) {
                        return fail("negative base score".into());
                    }
                    let sum: f64 = s.iter().map(|v| *v as f64).sum();
                    if (sum - 1.0).abs() > 1e-4 {
                        return fail(format!("base scores sum to {sum}"));
                    }
                }
                (None, None, false) => {}
                _ => return fail("base outputs present/absent inconsistently with header".into()),
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = serde_json::to_vec(&Header {
            feature_dim: self.feature_dim,
            num_base: self.num_base,
            category_names: self.category_names.clone(),
            num_records: self.records.len(),
            has_labels: self.has_labels,
            has_base_outputs: self.has_base_outputs,
        })?;
        let mut out = Vec::with_capacity(12 + header.len() + self.records.len() * self.record_len());
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let put = |out: &mut Vec<u8>, vals: &[f32]| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for r in &self.records {
            out.extend_from_slice(&r.image_id.to_le_bytes());
            put(&mut out, &r.proposal_box);
            out.extend_from_slice(&r.label.to_le_bytes());
            put(&mut out, &r.gt_box);
            if let (Some(s), Some(b)) = (&r.base_scores, &r.base_boxes) {
                put(&mut out, s);
                put(&mut out, b);
            }
            put(&mut out, &r.feature);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        use FormatErrorKind::*;
        let len = bytes.len() as u64;
        if bytes.len() < 4 {
            return Err(Error::format(Truncated, len, "file shorter than magic"));
        }
        if &bytes[..4] != DATASET_MAGIC {
            return Err(Error::format(BadMagic, 0, format!("expected FSFD, found {:?}", &bytes[..4])));
        }
        if bytes.len() < 12 {
            return Err(Error::format(Truncated, len, "file shorter than preamble"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != DATASET_VERSION {
            return Err(Error::format(VersionMismatch, 4, format!("version {version}, expected {DATASET_VERSION}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = 12 + hlen;
        if bytes.len() < body {
            return Err(Error::format(Truncated, len, format!("header of {hlen} bytes is incomplete")));
        }
        let header: Header = serde_json::from_slice(&bytes[12..body])
            .map_err(|e| Error::format(BadHeader, 12, e.to_string()))?;
        if header.num_base > header.category_names.len() {
            return Err(Error::format(DimensionMismatch, 12, "num_base exceeds category count"));
        }

        let mut ds = FeatureDataset {
            feature_dim: header.feature_dim,
            num_base: header.num_base,
            category_names: header.category_names,
            has_labels: header.has_labels,
            has_base_outputs: header.has_base_outputs,
            records: Vec::with_capacity(header.num_records),
        };
        let rlen = ds.record_len();
        let expected_end = body as u64 + (header.num_records as u64) * rlen as u64;
        if len < expected_end {
            let complete = (len - body as u64) / rlen as u64;
            let at = body as u64 + complete * rlen as u64;
            return Err(Error::format(
                Truncated,
                at,
                format!("record {complete} of {} is incomplete ({} bytes available)", header.num_records, len - at),
            ));
        }
        if len > expected_end {
            return Err(Error::format(
                DimensionMismatch,
                expected_end,
                format!("{} trailing bytes after {} records", len - expected_end, header.num_records),
            ));
        }

        let ncat = ds.category_names.len() as i32;
        let mut pos = body;
        let take_f32 = |pos: &mut usize, n: usize| -> Vec<f32> {
            let v = bytes[*pos..*pos + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            *pos += 4 * n;
            v
        };
        for _ in 0..header.num_records {
            let start = pos as u64;
            let image_id = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
            pos += 4;
            let proposal_box: [f32; 4] = take_f32(&mut pos, 4).try_into().unwrap();
            let label = i32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
            if label < -1 || label >= ncat {
                return Err(Error::format(DimensionMismatch, pos as u64, format!("label {label} outside {ncat} categories")));
            }
            pos += 4;
            let gt_box: [f32; 4] = take_f32(&mut pos, 4).try_into().unwrap();
            let (base_scores, base_boxes) = if ds.has_base_outputs {
                let s = take_f32(&mut pos, ds.num_base + 1);
                let b = take_f32(&mut pos, 4 * ds.num_base);
                (Some(s), Some(b))
            } else {
                (None, None)
            };
            let feature = take_f32(&mut pos, ds.feature_dim);
            debug_assert_eq!(pos as u64 - start, rlen as u64);
            ds.records.push(ProposalRecord {
                image_id,
                proposal_box,
                label,
                gt_box,
                base_scores,
                base_boxes,
                feature,
            });
        }
        Ok(ds)
    }

    /// Keeps `shots` randomly chosen images per foreground category; records
    /// of a kept image are all retained.
    pub fn subsample_shots(&self, shots: usize, seed: u64) -> Result<Self> {
        use rand::seq::SliceRandom;
        if shots == 0 {
            return Err(invalid!("shots must be at least 1"));
        }
        let mut per_cat: Vec<Vec<u32>> = vec![Vec::new(); self.category_names.len()];
        for r in &self.records {
            if let Some(c) = r.category() {
                per_cat[c].push(r.image_id);
            }
        }
        let mut keep = std::collections::BTreeSet::new();
        for (c, imgs) in per_cat.iter_mut().enumerate() {
            imgs.sort_unstable();
            imgs.dedup();
            let mut rng = crate::seed::rng(seed, c as u64);
            imgs.shuffle(&mut rng);
            keep.extend(imgs.iter().take(shots).copied());
        }
        let mut out = self.clone();
        out.records.retain(|r| keep.contains(&r.image_id));
        Ok(out)
    }
}

pub fn write_dataset(ds: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = ds.to_bytes()?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    let bytes = fs::read(path)?;
    let ds = FeatureDataset::from_bytes(&bytes)?;
    ds.validate()?;
    Ok(ds)
}
