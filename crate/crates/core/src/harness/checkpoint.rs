//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `M3ICKPT\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then every
//! tensor listed in the header as little-endian `f64` in row-major order.

use super::config::RunConfig;
use super::optim::OptimizerConfig;
use crate::error::{Error, Result};
use crate::m3i::DynamicWeightState;
use crate::methods::MethodConfig;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"M3ICKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorGroup {
    Online,
    Momentum,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    group: TensorGroup,
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    run: RunConfig,
    method: MethodConfig,
    step: u64,
    dynamic: Option<DynamicWeightState>,
    optimizer: OptimizerConfig,
    optimizer_t: u64,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to resume a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub method: MethodConfig,
    pub step: u64,
    pub dynamic: Option<DynamicWeightState>,
    pub optimizer: OptimizerConfig,
    pub optimizer_t: u64,
    pub tensors: Vec<(TensorGroup, String, Array2<f64>)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: FORMAT_VERSION,
            run: self.run.clone(),
            method: self.method.clone(),
            step: self.step,
            dynamic: self.dynamic,
            optimizer: self.optimizer.clone(),
            optimizer_t: self.optimizer_t,
            tensors: self
                .tensors
                .iter()
                .map(|(group, name, a)| TensorEntry {
                    group: *group,
                    name: name.clone(),
                    rows: a.nrows(),
                    cols: a.ncols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, a) in &self.tensors {
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: &str| Error::IncompatibleCheckpoint(d.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(&format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
        let mut pos = 20 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for t in header.tensors {
            let n = t.rows * t.cols;
            let raw = bytes.get(pos..pos + 8 * n).ok_or_else(|| bad("truncated tensor data"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((t.group, t.name, Array2::from_shape_vec((t.rows, t.cols), data).expect("sized")));
            pos += 8 * n;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            run: header.run,
            method: header.method,
            step: header.step,
            dynamic: header.dynamic,
            optimizer: header.optimizer,
            optimizer_t: header.optimizer_t,
            tensors,
        })
    }

    /// Writes to a sibling temporary file, then renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let err = |source| Error::DiskWriteError {
            path: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(err)?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(err)?;
        f.write_all(&self.to_bytes()).map_err(err)?;
        f.sync_all().map_err(err)?;
        drop(f);
        fs::rename(&tmp, path).map_err(err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)
            .map_err(|e| Error::IncompatibleCheckpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn group(&self, group: TensorGroup) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.tensors
            .iter()
            .filter(move |(g, _, _)| *g == group)
            .map(|(_, n, a)| (n.as_str(), a))
    }
}
