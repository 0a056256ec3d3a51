use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fsdet::dataio::{
    generate_synthetic, read_dataset, read_detections, read_hierarchy, write_dataset, write_detections,
    write_hierarchy, FeatureDataset, SyntheticConfig,
};
use fsdet::detect::{canonical_order, decode_deltas, postprocess, BBox, Detection, PostProcessConfig, ScoredProposals};
use fsdet::eval::{convergence_report, default_splits, evaluate, mean_ci, ApSummary, EvalResult};
use fsdet::heads::{init_head, read_head, write_head, AugmentConfig, LossConfig, PredictorHead, RegressionLoss, WarmStart};
use fsdet::hierarchy::{
    analyze_base_behaviour, auto_assign, group_categories, group_training_sets, hda_inference, ClassHierarchy,
    HdaConfig, Slot,
};
use fsdet::optim::{Trainer, TrainerOptions, TrainerRegistry, TrainingCurve, TrainingSet};
use fsdet::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::manifest::{sidecar, RunManifest};
use crate::{AnalyzeArgs, AssignArgs, CompareArgs, EvalArgs, InferArgs, Preset, RegLoss, SynthArgs, TrainArgs};

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Read an input file, reporting a missing path as a usage error.
fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(config_err(format!("input not found: {}", path.display())))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn to_json_line<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// SplitMix64 step for per-repeat and per-group seeds.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn parse_parents(spec: &str) -> Result<Vec<Option<usize>>> {
    spec.split(',')
        .map(|t| match t.trim() {
            "bg" | "background" => Ok(None),
            s => s
                .parse::<usize>()
                .map(Some)
                .map_err(|_| config_err(format!("novel parent '{s}' is neither a base index nor 'bg'"))),
        })
        .collect()
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match (&a.preset, &a.config) {
        (Some(Preset::Acceptance), _) => SyntheticConfig::acceptance(),
        (None, Some(path)) => {
            require(path)?;
            serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| config_err(format!("{}: {e}", path.display())))?
        }
        (None, None) => SyntheticConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.categories {
        cfg.num_categories = v;
    }
    if let Some(v) = a.base {
        cfg.num_base = v;
    }
    if let Some(v) = a.shots {
        cfg.shots_per_category = v;
    }
    if let Some(v) = a.test_shots {
        cfg.test_shots_per_category = v;
    }
    if let Some(v) = a.dim {
        cfg.feature_dim = v;
    }
    let ratio = cfg.cluster_separation / cfg.within_cluster_std;
    if let Some(v) = a.sigma {
        cfg.within_cluster_std = v;
    }
    cfg.cluster_separation = a.separation.unwrap_or(ratio) * cfg.within_cluster_std;
    if let Some(v) = a.proposals_per_object {
        cfg.proposals_per_object = v;
    }
    if let Some(v) = a.background_proposals {
        cfg.background_proposals_per_image = v;
    }
    if a.base_outputs {
        cfg.base_outputs = true;
    }
    if let Some(s) = &a.novel_parents {
        cfg.novel_parents = parse_parents(s)?;
    }
    if let Some(v) = a.planted_frequency {
        cfg.planted_frequency = v;
    }
    cfg.validate().map_err(|e| config_err(e.to_string()))?;

    let mut manifest = RunManifest::start("synth", serde_json::to_value(&cfg)?, Some(cfg.seed));
    let data = generate_synthetic(&cfg)?;
    fs::create_dir_all(&a.out_dir)?;
    let train = a.out_dir.join("train.fsfd");
    let test = a.out_dir.join("test.fsfd");
    let hier = a.out_dir.join("hierarchy.json");
    write_dataset(&data.train, &train)?;
    write_dataset(&data.test, &test)?;
    write_hierarchy(&data.planted.hierarchy, &hier)?;
    if let Some(p) = &a.config {
        manifest.inputs.push(p.clone());
    }
    manifest.outputs = vec![train, test, hier];
    println!(
        "synth: {} train / {} test records, d = {}, {} categories",
        data.train.records.len(),
        data.test.records.len(),
        cfg.feature_dim,
        cfg.num_categories
    );
    manifest.write(&a.out_dir.join("manifest.json"))
}

struct Group {
    name: String,
    categories: Vec<String>,
    data: TrainingSet,
}

fn training_groups(ds: &FeatureDataset, h: Option<&ClassHierarchy>) -> Result<Vec<Group>> {
    match h {
        Some(h) => Ok(group_training_sets(ds, h)?
            .into_iter()
            .map(|g| Group {
                name: h.slot_name(g.slot).to_string(),
                categories: g.categories,
                data: g.data,
            })
            .collect()),
        None => Ok(vec![Group {
            name: "all".into(),
            categories: ds.category_names.clone(),
            data: TrainingSet::from_records(ds.feature_dim, &ds.records, |r| Some(r.label))?,
        }]),
    }
}

/// Copies the base head's rows for categories the group shares with it, and
/// its background row.
fn warm_start(base: &PredictorHead, base_names: &[String], categories: &[String]) -> Result<WarmStart> {
    if base.num_categories() != base_names.len() {
        return Err(config_err(format!(
            "base head predicts {} categories, dataset has {} base categories",
            base.num_categories(),
            base_names.len()
        )));
    }
    let mut ws = WarmStart::default();
    for (k, name) in categories.iter().enumerate() {
        if let Some(b) = base_names.iter().position(|n| n == name) {
            ws.classifier_rows.push((k, base.classifier_row(b).to_vec()));
            let block: Vec<f64> = (0..4).flat_map(|r| base.regressor_row(4 * b + r).to_vec()).collect();
            ws.regressor_blocks.push((k, block));
        }
    }
    ws.classifier_rows.push((categories.len(), base.classifier_row(base.background()).to_vec()));
    Ok(ws)
}

#[derive(Serialize)]
struct GroupSummary {
    name: String,
    categories: Vec<String>,
    records: usize,
    final_loss: Option<f64>,
}

pub fn train(a: TrainArgs) -> Result<()> {
    require(&a.data)?;
    let ds = read_dataset(&a.data)?;
    if !ds.has_labels {
        return Err(config_err("training needs a labeled dataset"));
    }
    let h = match &a.hierarchy {
        Some(p) => {
            require(p)?;
            Some(read_hierarchy(p)?)
        }
        None => None,
    };
    let base = match &a.base_head {
        Some(p) => {
            require(p)?;
            Some(read_head(p)?)
        }
        None => None,
    };
    if a.repeats == 0 {
        return Err(config_err("--repeats must be at least 1"));
    }
    let loss = LossConfig {
        regression: match a.reg_loss {
            RegLoss::L2 => RegressionLoss::L2,
            RegLoss::SmoothL1 => RegressionLoss::SmoothL1 { beta: a.smooth_l1_beta },
        },
        ..LossConfig::default()
    };
    loss.validate()?;
    let augment = (!a.no_augment).then_some(AugmentConfig {
        copies: a.aug_copies,
        noise_std: a.aug_noise,
        dropout_rate: a.aug_dropout,
    });
    let registry = TrainerRegistry::default();
    let options = |seed: u64| TrainerOptions {
        iterations: Some(a.iters),
        n_cg: Some(a.ncg),
        lambda: a.lambda,
        augment,
        learning_rate: Some(a.lr),
        momentum: Some(a.momentum),
        batch_images: Some(a.batch_images),
        eval_every: a.eval_every,
        seed,
    };
    let probe: Box<dyn Trainer> = registry.create(&a.optimizer, &options(a.seed))?;
    probe.check_loss(&loss)?;

    let mut manifest = RunManifest::start(
        "train",
        json!({
            "optimizer": a.optimizer,
            "trainer": probe.config(),
            "loss": loss,
            "init_std": a.init_std,
            "shots": a.shots,
            "repeats": a.repeats,
        }),
        Some(a.seed),
    );
    manifest.inputs.push(a.data.clone());
    manifest.inputs.extend(a.hierarchy.iter().cloned());
    manifest.inputs.extend(a.base_head.iter().cloned());
    fs::create_dir_all(&a.out_dir)?;

    let mut runs = Vec::new();
    for r in 0..a.repeats {
        let seed = if a.repeats == 1 { a.seed } else { derive_seed(a.seed, r as u64 + 1) };
        let dir: PathBuf = if a.repeats == 1 { a.out_dir.clone() } else { a.out_dir.join(format!("repeat_{r:02}")) };
        fs::create_dir_all(&dir)?;
        let subset;
        let ds_r = match a.shots {
            Some(k) => {
                subset = ds.subsample_shots(k, seed)?;
                &subset
            }
            None => &ds,
        };
        let trainer = registry.create(&a.optimizer, &options(seed))?;
        let mut summaries = Vec::new();
        for (g, group) in training_groups(ds_r, h.as_ref())?.into_iter().enumerate() {
            let ws = match &base {
                Some(b) => Some(warm_start(b, ds.base_names(), &group.categories)?),
                None => None,
            };
            let head = init_head(
                group.categories.len(),
                ds.feature_dim,
                a.init_std,
                derive_seed(seed, 0x4ead + g as u64),
                ws.as_ref(),
            )?;
            let (head, curve) = trainer.train(head, &group.data, &loss)?;
            let head_path = dir.join(format!("head_{}.fshw", group.name));
            let curve_path = dir.join(format!("curve_{}.csv", group.name));
            write_head(&head, &head_path)?;
            write_text(&curve_path, &curve.to_csv_string()?)?;
            println!(
                "train: {}group '{}' ({} records): final loss {:.6}",
                if a.repeats > 1 { format!("repeat {r} ") } else { String::new() },
                group.name,
                group.data.len(),
                curve.last_loss().unwrap_or(f64::NAN)
            );
            manifest.outputs.push(head_path);
            manifest.outputs.push(curve_path);
            summaries.push(GroupSummary {
                name: group.name,
                categories: group.categories,
                records: group.data.len(),
                final_loss: curve.last_loss(),
            });
        }
        runs.push(json!({ "seed": seed, "dir": dir, "groups": summaries }));
    }
    if let serde_json::Value::Object(m) = &mut manifest.config {
        m.insert("runs".into(), serde_json::Value::Array(runs));
    }
    manifest.write(&a.out_dir.join("manifest.json"))
}

fn load_head(dir: &Path, name: &str) -> Result<(PathBuf, PredictorHead)> {
    let p = dir.join(format!("head_{name}.fshw"));
    if !p.exists() {
        return Err(config_err(format!("missing head for group '{name}': {}", p.display())));
    }
    let head = read_head(&p)?;
    Ok((p, head))
}

/// One head over every dataset category, no routing.
fn flat_inference(ds: &FeatureDataset, head: &PredictorHead, post: &PostProcessConfig) -> Result<Vec<Detection>> {
    let k = ds.category_names.len();
    if head.num_categories() != k || head.feature_dim() != ds.feature_dim {
        return Err(config_err(format!(
            "flat head is {} categories x d = {}, dataset is {k} x d = {}",
            head.num_categories(),
            head.feature_dim(),
            ds.feature_dim
        )));
    }
    let feats: Vec<f64> = ds.records.iter().flat_map(|r| r.feature.iter().map(|v| *v as f64)).collect();
    let (probs, deltas) = head.forward(&feats)?;
    let mut scores = Vec::with_capacity(ds.records.len() * k);
    let mut boxes: Vec<BBox> = Vec::with_capacity(ds.records.len() * k);
    for (i, r) in ds.records.iter().enumerate() {
        let anchor = r.proposal_bbox();
        scores.extend_from_slice(&probs[i * (k + 1)..i * (k + 1) + k]);
        for c in 0..k {
            let t: [f64; 4] = deltas[i * 4 * k + 4 * c..i * 4 * k + 4 * c + 4].try_into().expect("4 deltas");
            boxes.push(decode_deltas(&t, &anchor)?);
        }
    }
    let ids: Vec<u32> = ds.records.iter().map(|r| r.image_id).collect();
    let mut dets = postprocess(
        &ScoredProposals {
            image_ids: &ids,
            categories: &ds.category_names,
            scores: &scores,
            boxes: &boxes,
        },
        post,
    )?
    .detections;
    canonical_order(&mut dets);
    Ok(dets)
}

pub fn infer(a: InferArgs) -> Result<()> {
    require(&a.data)?;
    let ds = read_dataset(&a.data)?;
    let cfg = HdaConfig {
        post: PostProcessConfig {
            score_threshold: a.post.score_thresh,
            nms_iou: a.post.nms_iou,
            topk_per_image: a.post.topk,
        },
        route_consumed: a.route_consumed,
        emit_parent: a.emit_parent,
    };
    cfg.post.validate().map_err(|e| config_err(e.to_string()))?;
    let mut manifest = RunManifest::start("infer", serde_json::to_value(cfg)?, None);
    manifest.inputs.push(a.data.clone());

    let dets = match &a.hierarchy {
        Some(hp) => {
            require(hp)?;
            let h = read_hierarchy(hp)?;
            manifest.inputs.push(hp.clone());
            let mut heads: BTreeMap<Slot, PredictorHead> = BTreeMap::new();
            for slot in h.groups() {
                let (p, head) = load_head(&a.heads, h.slot_name(slot))?;
                if head.num_categories() != group_categories(&h, slot).len() {
                    return Err(config_err(format!("{} does not match its group's categories", p.display())));
                }
                manifest.inputs.push(p);
                heads.insert(slot, head);
            }
            hda_inference(&ds.records, &h, &heads, &cfg)?
        }
        None => {
            let (p, head) = load_head(&a.heads, "all")?;
            manifest.inputs.push(p);
            flat_inference(&ds, &head, &cfg.post)?
        }
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_detections(&dets, &a.out)?;
    println!("infer: {} detections -> {}", dets.len(), a.out.display());
    manifest.outputs.push(a.out.clone());
    manifest.write(&sidecar(&a.out))
}

fn parse_split(s: &str) -> Result<(String, Vec<String>)> {
    let (name, cats) = s
        .split_once('=')
        .ok_or_else(|| config_err(format!("split '{s}' is not of the form name=cat1,cat2")))?;
    let cats: Vec<String> = cats.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
    if name.is_empty() || cats.is_empty() {
        return Err(config_err(format!("split '{s}' needs a name and at least one category")));
    }
    Ok((name.to_string(), cats))
}

#[derive(Debug, Serialize)]
struct MeanCi {
    mean: f64,
    ci95: f64,
}

#[derive(Debug, Serialize)]
struct SummaryCi {
    ap: Option<MeanCi>,
    ap50: Option<MeanCi>,
    ap75: Option<MeanCi>,
}

fn summary_ci(parts: &[&ApSummary]) -> SummaryCi {
    let stat = |f: fn(&ApSummary) -> Option<f64>| {
        let v: Vec<f64> = parts.iter().filter_map(|s| f(s)).collect();
        mean_ci(&v).map(|(mean, ci95)| MeanCi { mean, ci95 })
    };
    SummaryCi {
        ap: stat(|s| s.ap),
        ap50: stat(|s| s.ap50),
        ap75: stat(|s| s.ap75),
    }
}

#[derive(Debug, Serialize)]
struct RepeatedEval {
    repeats: usize,
    overall: SummaryCi,
    splits: BTreeMap<String, SummaryCi>,
    runs: Vec<EvalResult>,
}

fn fmt_ap(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{:.4}", x))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    require(&a.data)?;
    let gt = read_dataset(&a.data)?;
    let mut splits = default_splits(&gt);
    if let Some(hp) = &a.hierarchy {
        require(hp)?;
        let h = read_hierarchy(hp)?;
        for b in h.super_categories() {
            let cats = h.subset(Slot::Base(b)).into_iter().map(String::from).collect();
            splits.push((format!("under_{}", h.base()[b]), cats));
        }
    }
    for s in &a.splits {
        splits.push(parse_split(s)?);
    }
    let mut manifest = RunManifest::start("eval", json!({ "splits": splits }), None);
    manifest.inputs.push(a.data.clone());
    let mut results = Vec::new();
    for p in &a.dets {
        require(p)?;
        let dets = read_detections(p)?;
        results.push(evaluate(&dets, &gt, &splits)?);
        manifest.inputs.push(p.clone());
    }
    let text = if results.len() == 1 {
        let r = &results[0];
        println!("eval: AP {} AP50 {} AP75 {}", fmt_ap(r.overall.ap), fmt_ap(r.overall.ap50), fmt_ap(r.overall.ap75));
        for (name, s) in &r.splits {
            println!("eval: split {name}: AP {}", fmt_ap(s.ap));
        }
        to_json_line(r)?
    } else {
        let overall = summary_ci(&results.iter().map(|r| &r.overall).collect::<Vec<_>>());
        let mut per_split = BTreeMap::new();
        for (name, _) in &splits {
            let parts: Vec<&ApSummary> = results.iter().filter_map(|r| r.splits.get(name)).collect();
            per_split.insert(name.clone(), summary_ci(&parts));
        }
        if let Some(m) = &overall.ap {
            println!("eval: {} runs, AP {:.4} ± {:.4}", results.len(), m.mean, m.ci95);
        }
        to_json_line(&RepeatedEval {
            repeats: results.len(),
            overall,
            splits: per_split,
            runs: results,
        })?
    };
    write_text(&a.out, &text)?;
    manifest.outputs.push(a.out.clone());
    manifest.write(&sidecar(&a.out))
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let mut curves: Vec<(String, TrainingCurve)> = Vec::new();
    let mut manifest = RunManifest::start("compare", serde_json::Value::Null, None);
    for spec in &a.curves {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| config_err(format!("curve '{spec}' is not of the form name=path")))?;
        let path = PathBuf::from(path);
        require(&path)?;
        let curve = TrainingCurve::read_csv(fs::File::open(&path)?)?;
        manifest.inputs.push(path);
        curves.push((name.to_string(), curve));
    }
    let target = match (a.target, &a.target_final) {
        (Some(t), _) => t,
        (None, Some(name)) => {
            let (_, c) = curves
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| config_err(format!("--target-final names unknown curve '{name}'")))?;
            c.last_loss().ok_or_else(|| config_err(format!("curve '{name}' is empty")))? * a.target_factor
        }
        (None, None) => return Err(config_err("give --target or --target-final")),
    };
    let report = convergence_report(&curves, target)?;
    manifest.config = json!({ "target_loss": target, "target_final": a.target_final, "target_factor": a.target_factor });
    for e in &report.curves {
        match e.iteration {
            Some(it) => println!("compare: {} reaches {:.6} at iteration {it}", e.name, target),
            None => println!("compare: {} never reaches {:.6}", e.name, target),
        }
    }
    for r in &report.ratios {
        if let Some(x) = r.iteration_ratio {
            println!("compare: {} / {} iterations = {:.2}x", r.slower, r.faster, x);
        }
    }
    let csv_path = a.out.with_extension("csv");
    write_text(&a.out, &to_json_line(&report)?)?;
    write_text(&csv_path, &report.merged_csv)?;
    manifest.outputs = vec![a.out.clone(), csv_path];
    manifest.write(&sidecar(&a.out))
}

pub fn assign(a: AssignArgs) -> Result<()> {
    require(&a.data)?;
    let ds = read_dataset(&a.data)?;
    let h = auto_assign(&ds, a.threshold)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_hierarchy(&h, &a.out)?;
    for (n, s) in h.novel() {
        println!("assign: {n} -> {}", h.slot_name(*s));
    }
    let mut manifest = RunManifest::start("assign", json!({ "threshold": a.threshold }), None);
    manifest.inputs.push(a.data.clone());
    manifest.outputs.push(a.out.clone());
    manifest.write(&sidecar(&a.out))
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    require(&a.data)?;
    let ds = read_dataset(&a.data)?;
    let supers: Vec<usize> = match &a.hierarchy {
        Some(hp) => {
            require(hp)?;
            read_hierarchy(hp)?.super_categories()
        }
        None => (0..ds.num_base).collect(),
    };
    let table = analyze_base_behaviour(&ds, &supers)?;
    write_text(&a.out, &table.to_csv()?)?;
    let mut manifest = RunManifest::start("analyze", json!({ "super_categories": supers }), None);
    manifest.inputs.push(a.data.clone());
    manifest.inputs.extend(a.hierarchy.iter().cloned());
    manifest.outputs.push(a.out.clone());
    manifest.write(&sidecar(&a.out))
}
