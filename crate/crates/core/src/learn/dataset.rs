use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::env::HistoryKey;
use crate::error::{invalid, Result};
use crate::expert::CorrectionRecord;

/// One step of an initial demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub history: HistoryKey,
    pub state: usize,
    pub action: usize,
}

/// Demonstrations plus the corrections of every iteration so far.
///
/// `partitions[i - 1]` indexes the records added by iteration `i`; the
/// partitions tile `records` in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionDataset {
    pub num_actions: usize,
    pub demo_records: Vec<DemoRecord>,
    pub records: Vec<CorrectionRecord>,
    pub partitions: Vec<Range<usize>>,
}

impl CorrectionDataset {
    pub fn new(num_actions: usize, demo_records: Vec<DemoRecord>) -> Result<Self> {
        if demo_records.iter().any(|d| d.action >= num_actions) {
            return Err(invalid("demonstration action out of range"));
        }
        Ok(CorrectionDataset { num_actions, demo_records, records: Vec::new(), partitions: Vec::new() })
    }

    /// Number of completed iterations.
    pub fn iterations(&self) -> usize {
        self.partitions.len()
    }

    /// Appends the corrections of the next iteration and returns its index.
    pub fn push_iteration(&mut self, records: Vec<CorrectionRecord>) -> Result<usize> {
        let iteration = self.partitions.len() + 1;
        if let Some(r) = records.iter().find(|r| r.iteration != iteration) {
            return Err(invalid(format!("record from iteration {} pushed as iteration {iteration}", r.iteration)));
        }
        if records.iter().any(|r| r.corrected_action >= self.num_actions || r.student_action >= self.num_actions) {
            return Err(invalid("correction action out of range"));
        }
        let start = self.records.len();
        self.records.extend(records);
        self.partitions.push(start..self.records.len());
        Ok(iteration)
    }

    /// Records added by iteration `i ≥ 1`.
    pub fn iteration_records(&self, i: usize) -> &[CorrectionRecord] {
        &self.records[self.partitions[i - 1].clone()]
    }

    pub fn is_empty(&self) -> bool {
        self.demo_records.is_empty() && self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.demo_records.len() + self.records.len()
    }

    /// Supervised labels: demonstrated actions, then corrected actions.
    pub fn labels(&self) -> Vec<(HistoryKey, usize)> {
        self.demo_records
            .iter()
            .map(|d| (d.history.clone(), d.action))
            .chain(self.records.iter().map(|r| (r.history.clone(), r.corrected_action)))
            .collect()
    }

    /// `(t, state, action)` of every labelled step.
    pub fn state_labels(&self) -> Vec<(usize, usize, usize)> {
        self.demo_records
            .iter()
            .map(|d| (d.history.t(), d.state, d.action))
            .chain(self.records.iter().map(|r| (r.history.t(), r.state, r.corrected_action)))
            .collect()
    }
}
