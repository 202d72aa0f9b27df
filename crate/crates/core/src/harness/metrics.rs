//! Per-step metrics records in JSON-lines form.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Published field list of a metrics line, in serialization order.
pub const METRIC_FIELDS: [&str; 11] = [
    "step",
    "total",
    "ssp_i",
    "ssp_j",
    "sp_i",
    "sp_j",
    "lambda",
    "g_ssp_ema",
    "g_sp_ema",
    "feature_std",
    "effective_rank",
];

/// One training step. Per-term fields are `null` for single-target methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub step: u64,
    pub total: f64,
    pub ssp_i: Option<f64>,
    pub ssp_j: Option<f64>,
    pub sp_i: Option<f64>,
    pub sp_j: Option<f64>,
    pub lambda: Option<f64>,
    pub g_ssp_ema: Option<f64>,
    pub g_sp_ema: Option<f64>,
    pub feature_std: f64,
    pub effective_rank: f64,
}

impl MetricsRecord {
    pub fn single(step: u64, total: f64, feature_std: f64, effective_rank: f64) -> Self {
        Self {
            step,
            total,
            ssp_i: None,
            ssp_j: None,
            sp_i: None,
            sp_j: None,
            lambda: None,
            g_ssp_ema: None,
            g_sp_ema: None,
            feature_std,
            effective_rank,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }

    pub fn is_combined(&self) -> bool {
        self.ssp_i.is_some()
    }
}

/// Parses a whole log. Blank lines are skipped; line numbers in errors are
/// one-based.
pub fn parse_log(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedLog {
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

pub fn read_log(path: &Path) -> Result<Vec<MetricsRecord>> {
    parse_log(&std::fs::read_to_string(path)?)
}
