//! File formats and the synthetic dataset generator.
//!
//! - `FSFD` binary proposal-feature datasets ([`write_dataset`], [`read_dataset`])
//! - hierarchy JSON ([`write_hierarchy`], [`read_hierarchy`])
//! - detections as JSON lines ([`write_detections`], [`read_detections`])

mod dataset;
mod synthetic;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub use dataset::{read_dataset, write_dataset, FeatureDataset, ProposalRecord, DATASET_MAGIC, DATASET_VERSION};
pub use synthetic::{generate_synthetic, PlantedParameters, SyntheticConfig, SyntheticData};

use crate::detect::Detection;
use crate::error::{Error, Result};
use crate::hierarchy::ClassHierarchy;

pub fn read_hierarchy(path: impl AsRef<Path>) -> Result<ClassHierarchy> {
    ClassHierarchy::from_json(&fs::read_to_string(path)?)
}

pub fn write_hierarchy(h: &ClassHierarchy, path: impl AsRef<Path>) -> Result<()> {
    let mut text = h.to_json()?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_detections(dets: &[Detection], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for d in dets {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Detection = serde_json::from_str(&line)
            .map_err(|e| Error::Validation(format!("detections line {}: {e}", i + 1)))?;
        out.push(d);
    }
    Ok(out)
}
