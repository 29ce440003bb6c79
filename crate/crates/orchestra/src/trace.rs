//! Line-delimited trace records: one JSON object per prompt.
//!
//! The same schema serves two purposes. Runs emit orchestration fields
//! (`C`, `s`, `sequence`, `entropies`) per probe prompt per epoch, and the
//! optional embedding payload (`text`, `task_tag`, `target`, `oracle`,
//! `experts`) makes the format the ingestion contract for externally
//! produced runs.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::TaskTag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertEmbeddingRecord {
    pub expert_id: usize,
    pub h: Vec<f64>,
    pub token_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub prompt_id: String,
    pub epoch: usize,
    /// N x N interaction matrix, row-major.
    #[serde(rename = "C", skip_serializing_if = "Option::is_none", default)]
    pub c: Option<Vec<f64>>,
    /// First-selection distribution, length N.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub s: Option<Vec<f64>>,
    /// Realized expert sequence (1-based expert ids).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sequence: Option<Vec<usize>>,
    /// Token entropies keyed by expert id.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub entropies: Option<BTreeMap<String, f64>>,
    // ---- embedding payload (ingestion contract) ----
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub task_tag: Option<TaskTag>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub experts: Option<Vec<ExpertEmbeddingRecord>>,
}

impl TraceRecord {
    pub fn new(prompt_id: &str, epoch: usize) -> Self {
        TraceRecord {
            prompt_id: prompt_id.to_string(),
            epoch,
            c: None,
            s: None,
            sequence: None,
            entropies: None,
            text: None,
            task_tag: None,
            target: None,
            oracle: None,
            experts: None,
        }
    }
}

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Schema {
            line: 0,
            msg: e.to_string(),
        })?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Parse a trace file; errors carry 1-based line numbers.
pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    Ok(read_trace_numbered(path)?
        .into_iter()
        .map(|(_, r)| r)
        .collect())
}

pub fn read_trace_numbered(path: &Path) -> Result<Vec<(usize, TraceRecord)>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push((idx + 1, record));
    }
    Ok(out)
}
