use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::optim::TrainingCurve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceEntry {
    pub name: String,
    pub final_loss: Option<f64>,
    /// First iteration with loss ≤ target; `None` means never.
    pub iteration: Option<usize>,
    pub elapsed_seconds: Option<f64>,
}

/// How many times more iterations (and seconds) `slower` needs than `faster`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRatio {
    pub faster: String,
    pub slower: String,
    pub iteration_ratio: Option<f64>,
    pub time_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub target_loss: f64,
    pub curves: Vec<ConvergenceEntry>,
    pub ratios: Vec<SpeedupRatio>,
    /// Long-format CSV: `curve,iteration,elapsed_seconds,loss`.
    #[serde(skip)]
    pub merged_csv: String,
}

fn ratio(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    match (num, den) {
        (Some(n), Some(d)) if d > 0.0 => Some(n / d),
        (Some(n), Some(d)) if n == d => Some(1.0),
        _ => None,
    }
}

/// Time and iterations to reach `target_loss` for each curve, plus the
/// ratio for every ordered pair of curves.
pub fn convergence_report(curves: &[(String, TrainingCurve)], target_loss: f64) -> Result<ConvergenceReport> {
    if curves.len() < 2 {
        return Err(invalid!("a convergence report needs at least two curves"));
    }
    if !target_loss.is_finite() {
        return Err(invalid!("target loss must be finite"));
    }
    let entries: Vec<ConvergenceEntry> = curves
        .iter()
        .map(|(name, c)| {
            let hit = c.first_reaching(target_loss);
            ConvergenceEntry {
                name: name.clone(),
                final_loss: c.last_loss(),
                iteration: hit.map(|p| p.iteration),
                elapsed_seconds: hit.map(|p| p.elapsed_seconds),
            }
        })
        .collect();
    let mut ratios = Vec::new();
    for a in &entries {
        for b in &entries {
            if a.name == b.name {
                continue;
            }
            ratios.push(SpeedupRatio {
                faster: a.name.clone(),
                slower: b.name.clone(),
                iteration_ratio: ratio(b.iteration.map(|i| i as f64), a.iteration.map(|i| i as f64)),
                time_ratio: ratio(b.elapsed_seconds, a.elapsed_seconds),
            });
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let werr = |e: csv::Error| crate::Error::Validation(e.to_string());
    w.write_record(["curve", "iteration", "elapsed_seconds", "loss"]).map_err(werr)?;
    for (name, c) in curves {
        for p in &c.points {
            w.write_record([name.clone(), p.iteration.to_string(), p.elapsed_seconds.to_string(), p.loss.to_string()])
                .map_err(werr)?;
        }
    }
    let merged_csv = String::from_utf8(w.into_inner().map_err(|e| crate::Error::Validation(e.to_string()))?)
        .expect("csv output is utf-8");
    Ok(ConvergenceReport {
        target_loss,
        curves: entries,
        ratios,
        merged_csv,
    })
}

/// Mean and 95% half-width `1.96 · s / √n` with the sample standard
/// deviation `s`; the half-width is 0 for a single value.
pub fn mean_ci(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, 1.96 * var.sqrt() / (n as f64).sqrt()))
}
