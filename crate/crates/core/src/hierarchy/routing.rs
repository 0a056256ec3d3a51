use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ClassHierarchy, Slot};
use crate::dataio::{FeatureDataset, ProposalRecord};
use crate::detect::{canonical_order, decode_deltas, postprocess, BBox, Detection, PostProcessConfig, ScoredProposals};
use crate::error::{invalid, Error, Result};
use crate::heads::PredictorHead;
use crate::optim::TrainingSet;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct HdaConfig {
    pub post: PostProcessConfig,
    /// Route every proposal by its base argmax, including ones that already
    /// produced a base detection.
    pub route_consumed: bool,
    /// Let a group head under base category `b_i` emit `b_i` detections.
    pub emit_parent: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoutedProposals {
    pub base_detections: Vec<Detection>,
    pub consumed: BTreeSet<usize>,
    /// Group slot to routed proposal indices, ascending.
    pub groups: BTreeMap<Slot, Vec<usize>>,
    pub discarded: Vec<usize>,
}

fn check_base_outputs(records: &[ProposalRecord], num_base: usize) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        let (Some(s), Some(b)) = (&r.base_scores, &r.base_boxes) else {
            return Err(invalid!("record {i} has no base predictor outputs"));
        };
        if s.len() != num_base + 1 || b.len() != 4 * num_base {
            return Err(invalid!(
                "record {i} carries {} base scores and {} base box values for {num_base} base categories",
                s.len(),
                b.len()
            ));
        }
    }
    Ok(())
}

/// Base predictor post-processing restricted to the given base categories.
fn base_stage(records: &[ProposalRecord], h: &ClassHierarchy, emitting: &[usize], post: &PostProcessConfig) -> Result<crate::detect::PostProcessOutput> {
    let names: Vec<String> = emitting.iter().map(|&i| h.base()[i].clone()).collect();
    let k = emitting.len();
    let mut scores = Vec::with_capacity(records.len() * k);
    let mut boxes = Vec::with_capacity(records.len() * k);
    for r in records {
        let s = r.base_scores.as_ref().expect("checked");
        for &i in emitting {
            scores.push(s[i] as f64);
            boxes.push(r.base_box(i).expect("checked"));
        }
    }
    let ids: Vec<u32> = records.iter().map(|r| r.image_id).collect();
    postprocess(
        &ScoredProposals {
            image_ids: &ids,
            categories: &names,
            scores: &scores,
            boxes: &boxes,
        },
        post,
    )
}

/// Detections of a plain base predictor over every base category.
pub fn base_only_detections(records: &[ProposalRecord], num_base: usize, base_names: &[String], post: &PostProcessConfig) -> Result<Vec<Detection>> {
    check_base_outputs(records, num_base)?;
    let h = ClassHierarchy::new(base_names.to_vec(), &[] as &[(&str, &str)])?;
    let all: Vec<usize> = (0..num_base).collect();
    let mut dets = base_stage(records, &h, &all, post)?.detections;
    canonical_order(&mut dets);
    Ok(dets)
}

/// Stage 1 emits base detections for base categories without children;
/// stage 2 sends each remaining proposal to the group of its base argmax.
///
/// A proposal whose argmax is a childless base category, or background when
/// no novel category sits under background, is discarded.
pub fn route_proposals(records: &[ProposalRecord], h: &ClassHierarchy, cfg: &HdaConfig) -> Result<RoutedProposals> {
    let nb = h.num_base();
    check_base_outputs(records, nb)?;
    let emitting: Vec<usize> = (0..nb).filter(|&i| h.emits_base(i)).collect();
    let stage1 = base_stage(records, h, &emitting, &cfg.post)?;
    let live: BTreeSet<Slot> = h.groups().into_iter().collect();

    let mut out = RoutedProposals {
        base_detections: stage1.detections,
        consumed: stage1.consumed,
        ..Default::default()
    };
    for (p, r) in records.iter().enumerate() {
        if !cfg.route_consumed && out.consumed.contains(&p) {
            continue;
        }
        let a = r.base_argmax().expect("checked");
        let slot = if a == nb { Slot::Background } else { Slot::Base(a) };
        if live.contains(&slot) {
            out.groups.entry(slot).or_default().push(p);
        } else {
            out.discarded.push(p);
        }
    }
    Ok(out)
}

/// Foreground categories of the head serving `slot`: its novel subset in
/// declaration order, followed by the parent for a base slot.
pub fn group_categories(h: &ClassHierarchy, slot: Slot) -> Vec<String> {
    let mut names: Vec<String> = h.subset(slot).into_iter().map(String::from).collect();
    if let Slot::Base(i) = slot {
        names.push(h.base()[i].clone());
    }
    names
}

/// Head label of a dataset category inside a group (`-1` for anything the
/// group head treats as background).
pub fn group_label(group_names: &[String], category: Option<&str>) -> i32 {
    category
        .and_then(|c| group_names.iter().position(|g| g == c))
        .map_or(-1, |i| i as i32)
}

/// End-to-end two-stage inference; output in canonical order.
pub fn hda_inference(
    records: &[ProposalRecord],
    h: &ClassHierarchy,
    heads: &BTreeMap<Slot, PredictorHead>,
    cfg: &HdaConfig,
) -> Result<Vec<Detection>> {
    for slot in h.groups() {
        let names = group_categories(h, slot);
        let head = heads
            .get(&slot)
            .ok_or_else(|| Error::Config(format!("no head for group '{}'", h.slot_name(slot))))?;
        if head.num_categories() != names.len() {
            return Err(Error::Config(format!(
                "head for group '{}' predicts {} categories, group has {}",
                h.slot_name(slot),
                head.num_categories(),
                names.len()
            )));
        }
    }
    let routed = route_proposals(records, h, cfg)?;
    let mut dets = routed.base_detections;
    dets.extend(second_stage(records, h, heads, &routed.groups, cfg)?);
    canonical_order(&mut dets);
    Ok(dets)
}

/// All groups are pooled into one post-processing pass so that the per-image
/// top-k covers the whole second stage. A proposal only scores in its own
/// group's columns.
fn second_stage(
    records: &[ProposalRecord],
    h: &ClassHierarchy,
    heads: &BTreeMap<Slot, PredictorHead>,
    groups: &BTreeMap<Slot, Vec<usize>>,
    cfg: &HdaConfig,
) -> Result<Vec<Detection>> {
    // emitting columns per group: (head category index, output name)
    let mut columns: Vec<(Slot, usize, String)> = Vec::new();
    for slot in h.groups() {
        let names = group_categories(h, slot);
        let emit = match slot {
            Slot::Base(_) if !cfg.emit_parent => names.len() - 1,
            _ => names.len(),
        };
        for (c, n) in names.into_iter().enumerate().take(emit) {
            columns.push((slot, c, n));
        }
    }
    let k = columns.len();
    let routed: Vec<(Slot, usize)> = groups.iter().flat_map(|(s, ps)| ps.iter().map(move |p| (*s, *p))).collect();
    if k == 0 || routed.is_empty() {
        return Ok(Vec::new());
    }

    let mut scores = vec![0.0; routed.len() * k];
    let mut boxes: Vec<BBox> = Vec::with_capacity(routed.len() * k);
    for &(_, p) in &routed {
        boxes.extend(std::iter::repeat_n(records[p].proposal_bbox(), k));
    }
    let d = records.first().map_or(0, |r| r.feature.len());
    let mut offset = 0;
    for (slot, ps) in groups {
        let head = &heads[slot];
        let feats: Vec<f64> = ps.iter().flat_map(|&p| records[p].feature.iter().map(|v| *v as f64)).collect();
        if feats.len() != ps.len() * head.feature_dim() || d != head.feature_dim() {
            return Err(Error::Config(format!(
                "head for group '{}' expects d = {}, records have d = {d}",
                h.slot_name(*slot),
                head.feature_dim()
            )));
        }
        let (probs, deltas) = head.forward(&feats)?;
        let kc = head.num_categories() + 1;
        let kd = 4 * head.num_categories();
        for (j, &p) in ps.iter().enumerate() {
            let row = offset + j;
            let anchor = records[p].proposal_bbox();
            for (col, (cs, c, _)) in columns.iter().enumerate() {
                if cs != slot {
                    continue;
                }
                scores[row * k + col] = probs[j * kc + c];
                let t: [f64; 4] = deltas[j * kd + 4 * c..j * kd + 4 * c + 4].try_into().unwrap();
                boxes[row * k + col] = decode_deltas(&t, &anchor)?;
            }
        }
        offset += ps.len();
    }

    let ids: Vec<u32> = routed.iter().map(|&(_, p)| records[p].image_id).collect();
    let names: Vec<String> = columns.into_iter().map(|(_, _, n)| n).collect();
    Ok(postprocess(
        &ScoredProposals {
            image_ids: &ids,
            categories: &names,
            scores: &scores,
            boxes: &boxes,
        },
        &cfg.post,
    )?
    .detections)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupTrainingSet {
    pub slot: Slot,
    /// Head foreground categories, see [`group_categories`].
    pub categories: Vec<String>,
    pub data: TrainingSet,
}

/// Training records per group.
///
/// With base outputs present, a labeled record joins the group of its base
/// argmax; without them every record joins every group. Categories outside a
/// group become that head's background.
pub fn group_training_sets(ds: &FeatureDataset, h: &ClassHierarchy) -> Result<Vec<GroupTrainingSet>> {
    if !ds.has_labels {
        return Err(Error::Validation("training needs a labeled dataset".into()));
    }
    if ds.base_names() != h.base() {
        return Err(Error::Validation("dataset base categories differ from the hierarchy's".into()));
    }
    for (n, _) in h.novel() {
        if ds.category_index(n).is_none() {
            return Err(Error::Validation(format!("hierarchy category '{n}' is not in the dataset")));
        }
    }
    if ds.has_base_outputs {
        check_base_outputs(&ds.records, h.num_base())?;
    }
    let nb = h.num_base();
    let mut out = Vec::new();
    for slot in h.groups() {
        let categories = group_categories(h, slot);
        let data = TrainingSet::from_records(ds.feature_dim, &ds.records, |r| {
            if ds.has_base_outputs {
                let a = r.base_argmax().expect("checked");
                let s = if a == nb { Slot::Background } else { Slot::Base(a) };
                if s != slot {
                    return None;
                }
            }
            let name = r.category().map(|c| ds.category_names[c].as_str());
            Some(group_label(&categories, name))
        })?;
        if data.is_empty() {
            return Err(Error::Validation(format!("no training records route to group '{}'", h.slot_name(slot))));
        }
        out.push(GroupTrainingSet { slot, categories, data });
    }
    Ok(out)
}
