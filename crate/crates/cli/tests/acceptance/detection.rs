use std::collections::{BTreeMap, BTreeSet};

use fsdet::dataio::{generate_synthetic, FeatureDataset, ProposalRecord, SyntheticConfig};
use fsdet::detect::{iou, nms, BBox, Detection};
use fsdet::eval::{average_precision, default_splits, evaluate};
use fsdet::heads::init_head;
use fsdet::hierarchy::{
    auto_assign, base_only_detections, group_categories, hda_inference, route_proposals, ClassHierarchy, HdaConfig,
    Slot,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

fn json(dets: &[Detection]) -> String {
    serde_json::to_string(dets).unwrap()
}

pub fn base_preservation() -> Outcome {
    let data = generate_synthetic(&SyntheticConfig::acceptance()).map_err(|e| e.to_string())?;
    let ds = &data.test;
    let base = ds.base_names().to_vec();
    let standard = ClassHierarchy::standard(base.clone(), ds.novel_names()).map_err(|e| e.to_string())?;
    let refined = data.planted.hierarchy.clone();
    let post = HdaConfig::default().post;
    let reference = base_only_detections(&ds.records, ds.num_base, &base, &post).map_err(|e| e.to_string())?;

    let mut runs = 0;
    let mut base_dets = 0;
    for (hname, h) in [("standard", &standard), ("class-refined", &refined)] {
        let emitting: BTreeSet<&str> = (0..h.num_base()).filter(|&i| h.emits_base(i)).map(|i| h.base()[i].as_str()).collect();
        let expected: Vec<Detection> = reference.iter().filter(|d| emitting.contains(d.category.as_str())).cloned().collect();
        for seed in 0..10u64 {
            for emit_parent in [false, true] {
                let mut heads = BTreeMap::new();
                for slot in h.groups() {
                    let k = group_categories(h, slot).len();
                    heads.insert(slot, init_head(k, ds.feature_dim, 0.05, seed * 31 + k as u64, None).unwrap());
                }
                let cfg = HdaConfig { emit_parent, ..HdaConfig::default() };
                let dets = hda_inference(&ds.records, h, &heads, &cfg).map_err(|e| e.to_string())?;
                let got: Vec<Detection> = dets.into_iter().filter(|d| emitting.contains(d.category.as_str())).collect();
                if json(&got) != json(&expected) {
                    return Err(format!(
                        "{hname} hierarchy, head seed {seed}, emit_parent {emit_parent}: {} base detections vs {} base-only",
                        got.len(),
                        expected.len()
                    ));
                }
                runs += 1;
                base_dets = expected.len();
            }
        }
    }
    Ok(format!(
        "{runs} runs over standard and class-refined hierarchies bit-identical ({} base-only detections, {base_dets} from childless bases)",
        reference.len()
    ))
}

fn random_records(rng: &mut ChaCha8Rng, nb: usize, n: usize) -> Vec<ProposalRecord> {
    (0..n)
        .map(|_| {
            let mut s: Vec<f32> = (0..=nb).map(|_| rng.random_range(0.0..1.0f32).powi(3)).collect();
            let total: f32 = s.iter().sum();
            s.iter_mut().for_each(|v| *v /= total);
            let mut boxes = Vec::with_capacity(4 * nb);
            for _ in 0..nb {
                let x = rng.random_range(0.0..80.0f32);
                let y = rng.random_range(0.0..80.0f32);
                boxes.extend([x, y, x + rng.random_range(5.0..20.0f32), y + rng.random_range(5.0..20.0f32)]);
            }
            ProposalRecord {
                image_id: rng.random_range(0..4),
                proposal_box: [10.0, 10.0, 30.0, 30.0],
                label: -1,
                gt_box: [0.0; 4],
                base_scores: Some(s),
                base_boxes: Some(boxes),
                feature: vec![0.0; 2],
            }
        })
        .collect()
}

fn random_hierarchy(rng: &mut ChaCha8Rng, nb: usize) -> ClassHierarchy {
    let base: Vec<String> = (0..nb).map(|i| format!("b{i}")).collect();
    let novel: Vec<(String, Slot)> = (0..rng.random_range(0..6))
        .map(|i| {
            let p = rng.random_range(0..=nb);
            (format!("n{i}"), if p == nb { Slot::Background } else { Slot::Base(p) })
        })
        .collect();
    ClassHierarchy::from_slots(base, novel).unwrap()
}

fn check_partition(records: &[ProposalRecord], h: &ClassHierarchy, cfg: &HdaConfig) -> Result<(), String> {
    let r = route_proposals(records, h, cfg).map_err(|e| e.to_string())?;
    let live: BTreeSet<Slot> = h.groups().into_iter().collect();
    let mut seen = vec![0usize; records.len()];
    for (slot, ps) in &r.groups {
        if !live.contains(slot) {
            return Err(format!("proposals routed to empty group {slot:?}"));
        }
        for &p in ps {
            seen[p] += 1;
            let a = records[p].base_argmax().unwrap();
            let s = if a == h.num_base() { Slot::Background } else { Slot::Base(a) };
            if s != *slot {
                return Err(format!("proposal {p} with argmax {a} routed to {slot:?}"));
            }
        }
    }
    for &p in &r.discarded {
        seen[p] += 1;
    }
    if !cfg.route_consumed {
        for &p in &r.consumed {
            seen[p] += 1;
        }
    }
    match seen.iter().position(|&c| c != 1) {
        Some(p) => Err(format!("proposal {p} appears {} times across consumed/routed/discarded", seen[p])),
        None => Ok(()),
    }
}

pub fn routing_and_assign() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for case in 0..100 {
        let nb = rng.random_range(1..=5);
        let h = random_hierarchy(&mut rng, nb);
        let n = rng.random_range(0..=40);
        let records = random_records(&mut rng, nb, n);
        let cfg = HdaConfig { route_consumed: case % 3 == 0, ..HdaConfig::default() };
        check_partition(&records, &h, &cfg).map_err(|e| format!("routing case {case}: {e}"))?;
    }

    let mut recovered = 0;
    let mut configs = vec![SyntheticConfig::acceptance()];
    for seed in 1..=3 {
        configs.push(SyntheticConfig {
            feature_dim: 64,
            planted_frequency: 0.9,
            seed,
            ..SyntheticConfig::acceptance()
        });
    }
    for cfg in &configs {
        let data = generate_synthetic(cfg).map_err(|e| e.to_string())?;
        let got = auto_assign(&data.train, 0.5).map_err(|e| e.to_string())?;
        if got != data.planted.hierarchy {
            return Err(format!(
                "auto_assign (seed {}, frequency {}) gave {} instead of the planted {}",
                cfg.seed,
                cfg.planted_frequency,
                got.to_json().unwrap(),
                data.planted.hierarchy.to_json().unwrap()
            ));
        }
        recovered += 1;
    }
    Ok(format!("100 routing inputs partitioned; planted hierarchy recovered on {recovered}/{} datasets", configs.len()))
}

/// The kept set is the unique `S` with: `i ∈ S` iff no higher-priority
/// member of `S` overlaps `i` by more than the threshold. Found by trying
/// every subset.
fn nms_reference(cands: &[(f64, BBox)], thr: f64) -> BTreeSet<usize> {
    let n = cands.len();
    let before = |j: usize, i: usize| cands[j].0 > cands[i].0 || (cands[j].0 == cands[i].0 && j < i);
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let member = |i: usize| mask & (1 << i) != 0;
        let consistent = (0..n).all(|i| {
            let suppressed = (0..n).any(|j| j != i && member(j) && before(j, i) && iou(&cands[j].1, &cands[i].1) > thr);
            member(i) == !suppressed
        });
        if consistent {
            found.push(mask);
        }
    }
    assert_eq!(found.len(), 1, "greedy NMS fixed point is unique");
    (0..n).filter(|i| found[0] & (1 << i) != 0).collect()
}

fn gt_record(image_id: u32, label: i32, b: [f32; 4]) -> ProposalRecord {
    ProposalRecord {
        image_id,
        proposal_box: b,
        label,
        gt_box: b,
        base_scores: None,
        base_boxes: None,
        feature: vec![0.0],
    }
}

fn det(image_id: u32, category: &str, score: f64, b: [f64; 4]) -> Detection {
    Detection { image_id, category: category.into(), score, bbox: BBox::new(b[0], b[1], b[2], b[3]) }
}

/// Two images, categories a (base), b and c (novel).
///
/// a: two gts; TP at IoU 1 (0.9), TP at IoU 9/11 ≈ 0.818 (0.8), FP (0.7).
///    Thresholds ≤ 0.80 give AP 1; 0.85 to 0.95 give recall 1/2 at
///    precision 1, i.e. 51/101. AP = (7 + 3·51/101)/10 = 86/101.
/// b: one gt; FP (0.95, wrong image) ranked above a TP at IoU 2/3 (0.6).
///    Thresholds ≤ 0.65 give precision 1/2 at full recall; above, AP 0.
///    AP = 4·0.5/10 = 0.2, AP50 = 0.5, AP75 = 0.
/// c: one gt, no detections: 0.
fn constructed_case() -> (FeatureDataset, Vec<Detection>) {
    let mut ds = FeatureDataset::empty(1, vec!["a".into(), "b".into(), "c".into()], 1);
    ds.records = vec![
        gt_record(0, 0, [0.0, 0.0, 10.0, 10.0]),
        gt_record(0, 1, [20.0, 0.0, 30.0, 10.0]),
        gt_record(1, 0, [0.0, 0.0, 10.0, 10.0]),
        gt_record(1, 2, [40.0, 0.0, 50.0, 10.0]),
    ];
    let dets = vec![
        det(0, "a", 0.9, [0.0, 0.0, 10.0, 10.0]),
        det(1, "a", 0.8, [1.0, 0.0, 11.0, 10.0]),
        det(1, "a", 0.7, [30.0, 30.0, 40.0, 40.0]),
        det(0, "b", 0.6, [22.0, 0.0, 32.0, 10.0]),
        det(1, "b", 0.95, [20.0, 0.0, 30.0, 10.0]),
    ];
    (ds, dets)
}

fn close(got: Option<f64>, want: f64) -> bool {
    got.is_some_and(|g| (g - want).abs() <= 1e-12)
}

pub fn nms_and_ap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for case in 0..200 {
        let n = rng.random_range(0..=10);
        let cands: Vec<(f64, BBox)> = (0..n)
            .map(|_| {
                // coarse scores so ties occur
                let s = rng.random_range(0..5) as f64 / 4.0;
                let x = rng.random_range(0.0..30.0);
                let y = rng.random_range(0.0..30.0);
                (s, BBox::new(x, y, x + rng.random_range(5.0..25.0), y + rng.random_range(5.0..25.0)))
            })
            .collect();
        let thr = [0.3, 0.5, 0.7][case % 3];
        let got: BTreeSet<usize> = nms(&cands, thr).into_iter().collect();
        let want = nms_reference(&cands, thr);
        if got != want {
            return Err(format!("NMS case {case}: kept {got:?}, reference {want:?}"));
        }
    }

    let (ds, dets) = constructed_case();
    let r = evaluate(&dets, &ds, &default_splits(&ds)).map_err(|e| e.to_string())?;
    let ap_a = 86.0 / 101.0;
    let expect = [
        (r.categories[0].ap, ap_a),
        (r.categories[1].ap, 0.2),
        (r.categories[2].ap, 0.0),
        (r.categories[1].ap50, 0.5),
        (r.categories[1].ap75, 0.0),
    ];
    let overall_ok = close(r.overall.ap, (ap_a + 0.2) / 3.0)
        && close(r.overall.ap50, 0.5)
        && close(r.overall.ap75, 1.0 / 3.0)
        && close(r.splits["base"].ap, ap_a)
        && close(r.splits["novel"].ap, 0.1)
        && close(r.splits["novel"].ap50, 0.25);
    if !overall_ok || expect.iter().any(|(g, w)| (g - w).abs() > 1e-12) {
        return Err(format!("constructed evaluation case mismatch: {}", serde_json::to_string(&r).unwrap()));
    }

    for case in 0..100 {
        let n = rng.random_range(0..15);
        let scored: Vec<(f64, bool)> = (0..n).map(|_| (rng.random_range(0.1..0.9), rng.random_bool(0.5))).collect();
        let tps = scored.iter().filter(|s| s.1).count();
        let num_gt = tps + 1 + rng.random_range(0..3);
        let base = average_precision(&scored, num_gt);
        let mut with_fp = scored.clone();
        with_fp.push((0.05, false));
        let mut with_tp = scored.clone();
        with_tp.push((0.95, true));
        if average_precision(&with_fp, num_gt) > base || average_precision(&with_tp, num_gt) < base {
            return Err(format!("AP monotonicity case {case} violated"));
        }
    }
    Ok("200 NMS cases match exhaustive reference; constructed 2-image/3-category case exact; 100 monotonicity cases hold".into())
}
