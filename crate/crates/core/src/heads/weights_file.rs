use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PredictorHead;
use crate::error::{Error, FormatErrorKind, Result};

pub const HEAD_MAGIC: &[u8; 4] = b"FSHW";
pub const HEAD_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(rename = "C")]
    num_categories: usize,
    d: usize,
}

impl PredictorHead {
    /// Serializes to `FSHW`: magic, `u32` version, `u32` header length, JSON
    /// header `{"C", "d"}`, then `f32` little-endian classifier and regressor
    /// blocks.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            num_categories: self.num_categories(),
            d: self.feature_dim(),
        })?;
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.num_params());
        out.extend_from_slice(HEAD_MAGIC);
        out.extend_from_slice(&HEAD_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.classifier().iter().chain(self.regressor()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        use FormatErrorKind::*;
        if bytes.len() < 12 {
            return Err(Error::format(Truncated, 0, "file shorter than the fixed preamble"));
        }
        if &bytes[..4] != HEAD_MAGIC {
            return Err(Error::format(BadMagic, 0, format!("expected {HEAD_MAGIC:?}")));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != HEAD_VERSION {
            return Err(Error::format(VersionMismatch, 4, format!("version {version}, expected {HEAD_VERSION}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = 12 + hlen;
        if bytes.len() < body {
            return Err(Error::format(Truncated, 12, "header extends past end of file"));
        }
        let header: Header = serde_json::from_slice(&bytes[12..body])
            .map_err(|e| Error::format(BadHeader, 12, e.to_string()))?;
        let w = header.d + 1;
        let n_cls = (header.num_categories + 1) * w;
        let n_reg = 4 * header.num_categories * w;
        let expected = body + 4 * (n_cls + n_reg);
        if bytes.len() < expected {
            let whole = body + (bytes.len() - body) / 4 * 4;
            return Err(Error::format(Truncated, whole as u64, format!("expected {expected} bytes, found {}", bytes.len())));
        }
        if bytes.len() > expected {
            return Err(Error::format(DimensionMismatch, expected as u64, "trailing bytes after weight blocks"));
        }
        let values: Vec<f64> = bytes[body..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let (cls, reg) = values.split_at(n_cls);
        PredictorHead::from_parts(header.num_categories, header.d, cls.to_vec(), reg.to_vec())
    }
}

pub fn write_head(head: &PredictorHead, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, head.to_bytes()?)?;
    Ok(())
}

pub fn read_head(path: impl AsRef<Path>) -> Result<PredictorHead> {
    PredictorHead::from_bytes(&fs::read(path)?)
}
