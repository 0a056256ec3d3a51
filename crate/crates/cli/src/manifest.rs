use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fsdet::Result;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub started_at: f64,
    pub finished_at: f64,
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_at: now(),
            finished_at: 0.0,
        }
    }

    pub fn write(mut self, path: &Path) -> Result<()> {
        self.finished_at = now();
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// `<file>.manifest.json` next to a single-file output.
pub fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
