use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use fsdet::dataio::read_dataset;
use fsdet::heads::{loss_value, LossConfig, PredictorHead};
use fsdet::optim::{TrainingCurve, TrainingSet};

use crate::{data_dir, oracle, Check, Outcome};

const SGD_ITERATIONS: usize = 5000;

fn fsdet(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fsdet"))
        .args(args)
        .output()
        .map_err(|e| format!("cannot run fsdet: {e}"))?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "fsdet {} exited with {}: {}",
            args.first().unwrap_or(&""),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

struct Measured {
    newton_final: f64,
    newton_iteration: Option<usize>,
    sgd_iteration: Option<usize>,
    iteration_ratio: Option<f64>,
    oracle: Result<oracle::GdOracle, String>,
}

fn measure(dir: &Path) -> Result<Measured, String> {
    let data = dir.join("data");
    fsdet(&["synth", "--preset", "acceptance", "--out-dir", p(&data)])?;
    let train = data.join("train.fsfd");
    let (newton, sgd) = (dir.join("newton"), dir.join("sgd"));
    fsdet(&["train", "--data", p(&train), "--optimizer", "newton", "--lambda", "0.5", "--out-dir", p(&newton)])?;
    let iters = SGD_ITERATIONS.to_string();
    fsdet(&[
        "train", "--data", p(&train), "--optimizer", "sgd", "--iters", &iters, "--eval-every", "10", "--out-dir", p(&sgd),
    ])?;
    let report = dir.join("compare.json");
    let newton_curve = format!("newton={}", p(&newton.join("curve_all.csv")));
    let sgd_curve = format!("sgd={}", p(&sgd.join("curve_all.csv")));
    fsdet(&["compare", "--curve", &newton_curve, "--curve", &sgd_curve, "--target-final", "newton", "--out", p(&report)])?;

    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let entry = |name: &str| rep["curves"].as_array().unwrap().iter().find(|c| c["name"] == name).cloned().unwrap();
    let ratio = rep["ratios"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["faster"] == "newton" && r["slower"] == "sgd")
        .and_then(|r| r["iteration_ratio"].as_f64());
    let newton_final = entry("newton")["final_loss"].as_f64().ok_or("newton curve is empty")?;

    let oracle = match oracle::load(&data_dir().join("gd_oracle.json")) {
        None => Err("gd_oracle.json missing; run with --regenerate-oracle".to_string()),
        Some(o) => {
            // the cache is only valid for the dataset it was computed on
            let ds = read_dataset(&train).map_err(|e| e.to_string())?;
            let set = TrainingSet::from_records(ds.feature_dim, &ds.records, |r| Some(r.label)).map_err(|e| e.to_string())?;
            let zero = PredictorHead::zeros(ds.category_names.len(), ds.feature_dim);
            let l0 = loss_value(&zero, set.batch(), &LossConfig::default()).map_err(|e| e.to_string())?.total;
            if (l0 - o.initial_loss).abs() > 1e-9 * l0 {
                Err(format!("cached oracle was computed on different data (initial loss {} vs {l0})", o.initial_loss))
            } else {
                Ok(o)
            }
        }
    };
    Ok(Measured {
        newton_final,
        newton_iteration: entry("newton")["iteration"].as_u64().map(|v| v as usize),
        sgd_iteration: entry("sgd")["iteration"].as_u64().map(|v| v as usize),
        iteration_ratio: ratio,
        oracle,
    })
}

pub fn convergence() -> Vec<(Check, Outcome)> {
    let check = |id, title| Check { id, title, budget: Some(Duration::from_secs(180)) };
    let a = check("5a", "Newton-CG within 1% of the gradient-descent oracle");
    let b = check("5b", "SGD needs at least 10x the Newton iterations");
    let dir = tempfile::tempdir().unwrap();
    let m = match measure(dir.path()) {
        Ok(m) => m,
        Err(e) => return vec![(a, Err(e.clone())), (b, Err(e))],
    };
    let oa = match &m.oracle {
        Err(e) => Err(e.clone()),
        Ok(o) => {
            let gap = (m.newton_final - o.optimal_loss) / o.optimal_loss;
            let detail = format!(
                "Newton final loss {:.4e}, oracle loss after {} steps {:.4e}, relative gap {:.3}",
                m.newton_final, o.steps, o.optimal_loss, gap
            );
            if gap <= 0.01 {
                Ok(detail)
            } else {
                Err(detail)
            }
        }
    };
    let ob = match (m.newton_iteration, m.sgd_iteration, m.iteration_ratio) {
        (Some(n), Some(s), Some(r)) => {
            let detail = format!("target {:.4e}: Newton at iteration {n}, SGD at {s}, ratio {r:.1}x", m.newton_final);
            if r >= 10.0 {
                Ok(detail)
            } else {
                Err(detail)
            }
        }
        (Some(n), None, _) if SGD_ITERATIONS >= 10 * n => Ok(format!(
            "target {:.4e}: Newton at iteration {n}, SGD not within {SGD_ITERATIONS} iterations (ratio > {:.0}x)",
            m.newton_final,
            SGD_ITERATIONS as f64 / n as f64
        )),
        _ => Err(format!("incomplete comparison: Newton {:?}, SGD {:?}", m.newton_iteration, m.sgd_iteration)),
    };
    vec![(a, oa), (b, ob)]
}

/// Files whose bytes must match between two identical invocations.
fn compare_files(a: &Path, b: &Path, names: &[&str]) -> Result<usize, String> {
    for n in names {
        let (x, y) = (fs::read(a.join(n)), fs::read(b.join(n)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            (Ok(_), Ok(_)) => return Err(format!("{n} differs between runs")),
            _ => return Err(format!("{n} missing")),
        }
    }
    Ok(names.len())
}

/// Curves carry wall-clock times; only iterations and losses must repeat.
fn same_curve_losses(a: &Path, b: &Path) -> Result<(), String> {
    let read = |p: &Path| -> Result<Vec<(usize, u64)>, String> {
        let c = TrainingCurve::read_csv(fs::File::open(p).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        Ok(c.points.iter().map(|q| (q.iteration, q.loss.to_bits())).collect())
    };
    if read(a)? == read(b)? {
        Ok(())
    } else {
        Err(format!("losses in {} differ between runs", a.display()))
    }
}

fn pipeline(root: &Path) -> Result<(), String> {
    let data = root.join("data");
    let synth = [
        "synth", "--seed", "7", "--categories", "6", "--base", "3", "--dim", "24", "--shots", "6", "--base-outputs",
        "--novel-parents", "0,bg,bg", "--out-dir", p(&data),
    ];
    fsdet(&synth)?;
    let (train, test, hier) = (data.join("train.fsfd"), data.join("test.fsfd"), data.join("hierarchy.json"));
    let heads = root.join("heads");
    fsdet(&["train", "--data", p(&train), "--hierarchy", p(&hier), "--iters", "5", "--lambda", "0.5", "--seed", "3", "--out-dir", p(&heads)])?;
    let sgd = root.join("sgd");
    fsdet(&["train", "--data", p(&train), "--optimizer", "sgd", "--iters", "40", "--reg-loss", "smooth-l1", "--seed", "3", "--out-dir", p(&sgd)])?;
    let mb = root.join("mb");
    fsdet(&["train", "--data", p(&train), "--hierarchy", p(&hier), "--optimizer", "newton-mb", "--iters", "4", "--shots", "3", "--repeats", "2", "--out-dir", p(&mb)])?;
    let dets = root.join("dets.jsonl");
    fsdet(&["infer", "--data", p(&test), "--hierarchy", p(&hier), "--heads", p(&heads), "--out", p(&dets)])?;
    fsdet(&["eval", "--dets", p(&dets), "--data", p(&test), "--hierarchy", p(&hier), "--out", p(&root.join("eval.json"))])?;
    fsdet(&["assign", "--data", p(&train), "--out", p(&root.join("assigned.json"))])?;
    fsdet(&["analyze", "--data", p(&train), "--out", p(&root.join("behaviour.csv"))])?;
    Ok(())
}

pub fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        pipeline(d.path())?;
    }
    let (a, b): (PathBuf, PathBuf) = (dirs[0].path().into(), dirs[1].path().into());
    // compare reads wall-clock columns, so both runs get the same input curves
    let c1 = format!("newton={}", p(&a.join("heads").join("curve_background.csv")));
    let c2 = format!("sgd={}", p(&a.join("sgd").join("curve_all.csv")));
    for root in [&a, &b] {
        fsdet(&["compare", "--curve", &c1, "--curve", &c2, "--target", "1.0", "--out", p(&root.join("compare.json"))])?;
    }
    let mut n = compare_files(&a, &b, &["dets.jsonl", "eval.json", "compare.json", "compare.csv", "assigned.json", "behaviour.csv"])?;
    n += compare_files(&a.join("data"), &b.join("data"), &["train.fsfd", "test.fsfd", "hierarchy.json"])?;
    n += compare_files(&a.join("heads"), &b.join("heads"), &["head_base_00.fshw", "head_background.fshw"])?;
    n += compare_files(&a.join("sgd"), &b.join("sgd"), &["head_all.fshw"])?;
    for r in ["repeat_00", "repeat_01"] {
        n += compare_files(&a.join("mb").join(r), &b.join("mb").join(r), &["head_base_00.fshw", "head_background.fshw"])?;
        same_curve_losses(&a.join("mb").join(r).join("curve_background.csv"), &b.join("mb").join(r).join("curve_background.csv"))?;
    }
    for (dir, name) in [("heads", "curve_base_00.csv"), ("heads", "curve_background.csv"), ("sgd", "curve_all.csv")] {
        same_curve_losses(&a.join(dir).join(name), &b.join(dir).join(name))?;
    }
    Ok(format!("every command run twice: {n} primary outputs byte-identical, curve losses identical"))
}
