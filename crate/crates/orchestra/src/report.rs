//! Report files: CSV tables (6 significant digits), machine-readable JSON
//! summaries, and row-major heatmap matrix exports. Everything written here
//! is re-parseable by the readers in this module.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probes::{AlignmentStats, MaskingStrategy, PerturbationKind};
use crate::stats;

/// Format with 6 significant digits. Plain decimal notation within a
/// reasonable magnitude window, scientific outside it.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..9).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // strip trailing zeros but keep at least one digit
        if s.contains('.') {
            let t = s.trim_end_matches('0').trim_end_matches('.');
            t.to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

/// A CSV table with a fixed header. Numeric cells go through [`fmt_sig6`].
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "{}", self.header.join(","))?;
        for row in &self.rows {
            writeln!(f, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Schema {
                line: 1,
                msg: "empty csv".into(),
            })?
            .split(',')
            .map(|s| s.to_string())
            .collect::<Vec<_>>();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<String> = line.split(',').map(|s| s.to_string()).collect();
            if cells.len() != header.len() {
                return Err(Error::Schema {
                    line: i + 2,
                    msg: format!("expected {} cells, got {}", header.len(), cells.len()),
                });
            }
            rows.push(cells);
        }
        Ok(CsvTable { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

// ---------------------------------------------------------------------------
// Masking summaries (the ratio pipeline)
// ---------------------------------------------------------------------------

/// Per-epoch masking KLs for one strategy, with 95% intervals across epochs
/// and the routing/sequencing ratio of the means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskingSummary {
    pub strategy: MaskingStrategy,
    /// (epoch, masked expert, KL sequence, KL routing) rows.
    pub per_epoch: Vec<MaskingEpochRow>,
    pub kl_sequence_mean: f64,
    pub kl_sequence_ci95: f64,
    pub kl_routing_mean: f64,
    pub kl_routing_ci95: f64,
    /// kl_routing_mean / kl_sequence_mean.
    pub routing_to_sequence_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskingEpochRow {
    pub epoch: usize,
    pub expert: usize,
    pub kl_sequence: f64,
    pub kl_routing: f64,
}

impl MaskingSummary {
    /// Aggregate per-epoch rows: means, 95% half-widths, and the
    /// routing/sequencing ratio.
    pub fn from_rows(strategy: MaskingStrategy, rows: Vec<MaskingEpochRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::TooFewSamples { need: 1, got: 0 });
        }
        let seq: Vec<f64> = rows.iter().map(|r| r.kl_sequence).collect();
        let rout: Vec<f64> = rows.iter().map(|r| r.kl_routing).collect();
        let (seq_mean, seq_ci) = if seq.len() >= 2 {
            stats::mean_ci95(&seq)?
        } else {
            (seq[0], 0.0)
        };
        let (rout_mean, rout_ci) = if rout.len() >= 2 {
            stats::mean_ci95(&rout)?
        } else {
            (rout[0], 0.0)
        };
        Ok(MaskingSummary {
            strategy,
            per_epoch: rows,
            kl_sequence_mean: seq_mean,
            kl_sequence_ci95: seq_ci,
            kl_routing_mean: rout_mean,
            kl_routing_ci95: rout_ci,
            routing_to_sequence_ratio: rout_mean / seq_mean,
        })
    }
}

/// Paired comparison between two masking strategies across epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskingComparison {
    pub baseline: MaskingStrategy,
    pub against: MaskingStrategy,
    pub wilcoxon: Option<stats::TestResult>,
    pub paired_t: Option<stats::TestResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskingReport {
    pub summaries: Vec<MaskingSummary>,
    pub comparisons: Vec<MaskingComparison>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationEpochRow {
    pub epoch: usize,
    pub kind: PerturbationKind,
    pub kl_sequence: f64,
    pub delta_entropy: f64,
    pub kl_routing: f64,
    pub changed_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub rows: Vec<PerturbationEpochRow>,
}

/// Per-epoch attribution table row (one line per expert per mode).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionRow {
    pub epoch: usize,
    pub expert: usize,
    pub intrinsic_self: f64,
    pub intrinsic_selected: f64,
    pub relational: f64,
}

/// Heatmap export: labeled row-major matrices per epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapExport {
    pub n: usize,
    pub labels: Vec<String>,
    /// epoch -> mean interaction matrix (row-major).
    pub collab_by_epoch: BTreeMap<usize, Vec<f64>>,
    /// epoch -> per-expert intrinsic importance.
    pub intrinsic_by_epoch: BTreeMap<usize, Vec<f64>>,
    /// epoch -> per-expert incoming mass.
    pub relational_by_epoch: BTreeMap<usize, Vec<f64>>,
}

/// The consolidated machine-readable summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub epochs: usize,
    pub final_collab_entropy: f64,
    pub final_ordering_entropy: f64,
    pub final_gini: f64,
    pub alignment_by_epoch: BTreeMap<usize, AlignmentStats>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub masking: Option<MaskingReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub perturbation: Option<PerturbationReport>,
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Schema {
        line: 0,
        msg: e.to_string(),
    })?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        line: 0,
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_formatting() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(5.528037383177571), "5.52804");
        assert_eq!(fmt_sig6(2.366), "2.366");
        assert_eq!(fmt_sig6(0.428), "0.428");
        assert_eq!(fmt_sig6(123456.789), "123457");
        assert_eq!(fmt_sig6(-0.0001234567), "-0.000123457");
        assert!(fmt_sig6(1.5e12).contains('e'));
    }

    #[test]
    fn sig6_reparses_close() {
        for &x in &[1.2345678, 0.000987654321, 9876543.21, 5.5280373] {
            let s = fmt_sig6(x);
            let y: f64 = s.parse().unwrap();
            assert!(((x - y) / x).abs() < 1e-5, "{x} -> {s} -> {y}");
        }
    }

    #[test]
    fn csv_round_trips() {
        let dir = std::env::temp_dir().join(format!("orchestra-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        let mut t = CsvTable::new(&["epoch", "value"]);
        t.push(vec!["1".into(), fmt_sig6(0.123456789)]);
        t.push(vec!["2".into(), fmt_sig6(2.366)]);
        t.write(&path).unwrap();
        let back = CsvTable::read(&path).unwrap();
        assert_eq!(back.header, vec!["epoch", "value"]);
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[1][1], "2.366");
        std::fs::remove_dir_all(&dir).ok();
    }

    /// The published masking means round-trip unchanged and produce the
    /// advertised routing/sequencing ratio.
    #[test]
    fn masking_fixture_ratio() {
        let rows = vec![
            MaskingEpochRow {
                epoch: 1,
                expert: 0,
                kl_sequence: 0.428,
                kl_routing: 2.366,
            };
            1
        ];
        let summary = MaskingSummary::from_rows(MaskingStrategy::TopIntrinsic, rows).unwrap();
        assert_eq!(summary.kl_sequence_mean, 0.428);
        assert_eq!(summary.kl_routing_mean, 2.366);
        let ratio = summary.routing_to_sequence_ratio;
        assert!((ratio - 5.53).abs() <= 0.01, "ratio {ratio}");
        // serializer round trip leaves the fixture unchanged
        let json = serde_json::to_string(&summary).unwrap();
        let back: MaskingSummary = serde_json::from_str(&json).unwrap();
        assert_eq!(back.kl_sequence_mean, 0.428);
        assert_eq!(back.kl_routing_mean, 2.366);
        // and the 6-significant-digit CSV form preserves the comparison
        let cell = fmt_sig6(back.routing_to_sequence_ratio);
        let parsed: f64 = cell.parse().unwrap();
        assert!((parsed - 5.53).abs() <= 0.01);
    }
}
