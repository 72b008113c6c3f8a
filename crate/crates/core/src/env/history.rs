use std::fmt;

use serde::{Deserialize, Serialize};

use super::PomdpSpec;
use crate::error::{invalid, Result};

/// Observation-action history `o_1, a_1, o_2, …, o_t`.
///
/// Stored flat; even positions are observations, odd positions actions, and
/// the sequence always ends in an observation.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct HistoryKey(Vec<u32>);

impl HistoryKey {
    pub fn initial(observation: usize) -> Self {
        HistoryKey(vec![observation as u32])
    }

    pub fn from_entries(entries: Vec<u32>) -> Result<Self> {
        if entries.len().is_multiple_of(2) {
            return Err(invalid(format!(
                "history must alternate o, a, …, o and end in an observation (got {} entries)",
                entries.len()
            )));
        }
        Ok(HistoryKey(entries))
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    /// Timestep `t` (1-based) of the decision this history precedes.
    pub fn t(&self) -> usize {
        self.0.len().div_ceil(2)
    }

    pub fn current_observation(&self) -> usize {
        *self.0.last().expect("history is never empty") as usize
    }

    pub fn observations(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().step_by(2).map(|x| *x as usize)
    }

    pub fn actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().skip(1).step_by(2).map(|x| *x as usize)
    }

    pub fn push(&mut self, action: usize, observation: usize) {
        self.0.push(action as u32);
        self.0.push(observation as u32);
    }

    pub fn extended(&self, action: usize, observation: usize) -> Self {
        let mut h = self.clone();
        h.push(action, observation);
        h
    }

    /// Keeps the current observation plus the last `window` action-observation
    /// pairs. Histories shorter than the window are returned whole.
    pub fn truncated(&self, window: usize) -> HistoryKey {
        let keep = 2 * window + 1;
        if self.0.len() <= keep {
            self.clone()
        } else {
            HistoryKey(self.0[self.0.len() - keep..].to_vec())
        }
    }

    pub fn is_prefix_of(&self, other: &HistoryKey) -> bool {
        other.0.starts_with(&self.0)
    }

    /// Checks index ranges and the horizon bound against `spec`.
    pub fn validate(&self, spec: &PomdpSpec) -> Result<()> {
        if self.t() > spec.horizon {
            return Err(invalid(format!("history length {} exceeds horizon {}", self.t(), spec.horizon)));
        }
        for o in self.observations() {
            spec.check_observation(o)?;
        }
        for a in self.actions() {
            spec.check_action(a)?;
        }
        Ok(())
    }
}

impl TryFrom<Vec<u32>> for HistoryKey {
    type Error = crate::error::LeapError;

    fn try_from(v: Vec<u32>) -> Result<Self> {
        HistoryKey::from_entries(v)
    }
}

impl From<HistoryKey> for Vec<u32> {
    fn from(h: HistoryKey) -> Self {
        h.0
    }
}

impl fmt::Debug for HistoryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h[")?;
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            if i % 2 == 0 {
                write!(f, "o{x}")?;
            } else {
                write!(f, "a{x}")?;
            }
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestep_and_accessors() {
        let h = HistoryKey::initial(2).extended(0, 1).extended(1, 0);
        assert_eq!(h.t(), 3);
        assert_eq!(h.observations().collect::<Vec<_>>(), vec![2, 1, 0]);
        assert_eq!(h.actions().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(h.current_observation(), 0);
    }

    #[test]
    fn truncation_keeps_last_pairs() {
        let h = HistoryKey::initial(2).extended(0, 1).extended(1, 0).extended(2, 1);
        assert_eq!(h.truncated(1).entries(), &[0, 2, 1]);
        assert_eq!(h.truncated(0).entries(), &[1]);
        assert_eq!(h.truncated(3), h);
        assert_eq!(h.truncated(10), h);
    }

    #[test]
    fn rejects_even_length() {
        assert!(HistoryKey::from_entries(vec![0, 1]).is_err());
        assert!(serde_json::from_str::<HistoryKey>("[0,1]").is_err());
        let h: HistoryKey = serde_json::from_str("[0,1,2]").unwrap();
        assert_eq!(h.t(), 2);
    }
}
