use serde::{Deserialize, Serialize};

use super::{ClassHierarchy, Slot, BACKGROUND};
use crate::dataio::FeatureDataset;
use crate::error::{invalid, Error, Result};

/// Base-argmax counts per novel category; slot `B` is background.
fn argmax_counts(ds: &FeatureDataset) -> Result<Vec<Vec<usize>>> {
    if !ds.has_base_outputs {
        return Err(invalid!("dataset carries no base predictor outputs"));
    }
    let nb = ds.num_base;
    let mut counts = vec![vec![0usize; nb + 1]; ds.novel_names().len()];
    for r in &ds.records {
        let Some(c) = r.category() else { continue };
        if c < nb {
            continue;
        }
        let a = r.base_argmax().ok_or_else(|| invalid!("record without base scores"))?;
        counts[c - nb][a] += 1;
    }
    for (j, row) in counts.iter().enumerate() {
        if row.iter().sum::<usize>() == 0 {
            return Err(Error::Validation(format!(
                "novel category '{}' has no records",
                ds.novel_names()[j]
            )));
        }
    }
    Ok(counts)
}

/// Assigns each novel category to the base category the base predictor
/// most often picks for it, when that frequency reaches `threshold`, and to
/// background otherwise. Ties favour background, then the lowest base index.
pub fn auto_assign(ds: &FeatureDataset, threshold: f64) -> Result<ClassHierarchy> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(invalid!("threshold must lie in [0, 1], got {threshold}"));
    }
    let counts = argmax_counts(ds)?;
    let nb = ds.num_base;
    let novel = ds
        .novel_names()
        .iter()
        .zip(&counts)
        .map(|(name, row)| {
            let total = row.iter().sum::<usize>() as f64;
            let best = (0..nb).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            let slot = if nb > 0 && row[best] > row[nb] && row[best] as f64 / total >= threshold {
                Slot::Base(best)
            } else {
                Slot::Background
            };
            (name.clone(), slot)
        })
        .collect();
    ClassHierarchy::from_slots(ds.base_names().to_vec(), novel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviourRow {
    pub category: String,
    pub count: usize,
    /// Aligned with [`BehaviourTable::columns`].
    pub fractions: Vec<f64>,
}

/// Where the base predictor sends each novel category.
///
/// Columns are background, then each listed super category, then
/// `other_base` for the remaining base categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviourTable {
    pub columns: Vec<String>,
    pub rows: Vec<BehaviourRow>,
}

impl BehaviourTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["category".to_string(), "count".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(|e| Error::Validation(e.to_string()))?;
        for r in &self.rows {
            let mut rec = vec![r.category.clone(), r.count.to_string()];
            rec.extend(r.fractions.iter().map(|f| f.to_string()));
            w.write_record(&rec).map_err(|e| Error::Validation(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// `supers` lists base category indices to report individually; typically
/// the base categories that have children in a hierarchy.
pub fn analyze_base_behaviour(ds: &FeatureDataset, supers: &[usize]) -> Result<BehaviourTable> {
    let nb = ds.num_base;
    if let Some(&s) = supers.iter().find(|&&s| s >= nb) {
        return Err(invalid!("super category index {s} out of base range"));
    }
    let counts = argmax_counts(ds)?;
    let mut columns = vec![BACKGROUND.to_string()];
    columns.extend(supers.iter().map(|&s| ds.category_names[s].clone()));
    let has_other = supers.len() < nb;
    if has_other {
        columns.push("other_base".into());
    }
    let rows = ds
        .novel_names()
        .iter()
        .zip(&counts)
        .map(|(name, row)| {
            let total: usize = row.iter().sum();
            let mut cells = vec![row[nb]];
            cells.extend(supers.iter().map(|&s| row[s]));
            if has_other {
                cells.push((0..nb).filter(|i| !supers.contains(i)).map(|i| row[i]).sum());
            }
            BehaviourRow {
                category: name.clone(),
                count: total,
                fractions: cells.iter().map(|&c| c as f64 / total as f64).collect(),
            }
        })
        .collect();
    Ok(BehaviourTable { columns, rows })
}

/// Super categories of a hierarchy: base slots with a nonempty subset.
impl ClassHierarchy {
    pub fn super_categories(&self) -> Vec<usize> {
        self.groups()
            .into_iter()
            .filter_map(|s| match s {
                Slot::Base(i) => Some(i),
                Slot::Background => None,
            })
            .collect()
    }
}
