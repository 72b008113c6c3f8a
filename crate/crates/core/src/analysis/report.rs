use std::io::Write;

use serde::{Deserialize, Serialize};

use super::gaps::GapMethod;
use crate::error::Result;

/// Metrics of one iterate `π_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    #[serde(rename = "J")]
    pub j: f64,
    pub success_rate: f64,
    pub avg_actions: f64,
    pub imitation_gap: f64,
    pub realizability_gap: f64,
    pub realizability_method: GapMethod,
    pub recoverability_reachable: f64,
    pub recoverability_all: f64,
    pub measured_regret: f64,
    pub theorem1_slack: f64,
}

impl MetricsRow {
    /// Bound slack recomputed from the row alone:
    /// `H_all (ε + γ) − imitation_gap`.
    pub fn recomputed_slack(&self) -> f64 {
        self.recoverability_all * (self.realizability_gap + self.measured_regret) - self.imitation_gap
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub spec_name: String,
    pub config_digest: String,
    pub root_seed: u64,
}

/// Validation results used to pick the returned iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best_iteration: usize,
    /// Validation success of `π_0, π_1, …`.
    pub validation_success: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<MetricsRow>,
    pub selection: Selection,
}

pub const CSV_COLUMNS: [&str; 11] = [
    "iteration",
    "J",
    "success_rate",
    "avg_actions",
    "imitation_gap",
    "realizability_gap",
    "realizability_method",
    "recoverability_reachable",
    "recoverability_all",
    "measured_regret",
    "theorem1_slack",
];

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if self.rows.is_empty() {
            out.write_record(CSV_COLUMNS)?;
        }
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn best_row(&self) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.iteration == self.selection.best_iteration)
    }
}
