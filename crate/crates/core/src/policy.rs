//! Tabular softmax student policies over truncated histories.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Actor, HistoryKey};
use crate::error::{invalid, Result};
use crate::math::{log_softmax, softmax, uniform};

/// `π(a | h) = softmax(logits[key(h)])`, where `key` keeps the current
/// observation and the last `truncation_window` action-observation pairs.
/// Keys without stored logits get the uniform distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularHistoryPolicy {
    num_actions: usize,
    truncation_window: usize,
    logits: BTreeMap<HistoryKey, Vec<f64>>,
}

/// Sparse gradient of a scalar with respect to one key's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyGradient {
    pub key: HistoryKey,
    pub values: Vec<f64>,
}

impl TabularHistoryPolicy {
    pub fn new(num_actions: usize, truncation_window: usize) -> Self {
        TabularHistoryPolicy { num_actions, truncation_window, logits: BTreeMap::new() }
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn truncation_window(&self) -> usize {
        self.truncation_window
    }

    pub fn key(&self, history: &HistoryKey) -> HistoryKey {
        history.truncated(self.truncation_window)
    }

    pub fn logits(&self, key: &HistoryKey) -> Option<&[f64]> {
        self.logits.get(key).map(Vec::as_slice)
    }

    /// Mutable logits for an already-truncated key, created as zeros.
    pub fn logits_mut(&mut self, key: &HistoryKey) -> &mut Vec<f64> {
        let n = self.num_actions;
        self.logits.entry(key.clone()).or_insert_with(|| vec![0.0; n])
    }

    pub fn set_logits(&mut self, key: HistoryKey, logits: Vec<f64>) -> Result<()> {
        if logits.len() != self.num_actions || logits.iter().any(|x| !x.is_finite()) {
            return Err(invalid(format!("expected {} finite logits", self.num_actions)));
        }
        self.logits.insert(key, logits);
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &HistoryKey> {
        self.logits.keys()
    }

    pub fn num_keys(&self) -> usize {
        self.logits.len()
    }

    pub fn distribution_for_key(&self, key: &HistoryKey) -> Vec<f64> {
        match self.logits.get(key) {
            Some(l) => softmax(l),
            None => uniform(self.num_actions),
        }
    }

    pub fn action_distribution(&self, history: &HistoryKey) -> Vec<f64> {
        self.distribution_for_key(&self.key(history))
    }

    pub fn log_prob(&self, history: &HistoryKey, action: usize) -> f64 {
        self.log_prob_for_key(&self.key(history), action)
    }

    pub fn log_prob_for_key(&self, key: &HistoryKey, action: usize) -> f64 {
        match self.logits.get(key) {
            Some(l) => log_softmax(l)[action],
            None => -(self.num_actions as f64).ln(),
        }
    }

    /// `log π(a|h)` and its gradient `onehot(a) − softmax(logits)` at the key.
    pub fn log_prob_and_grad(&self, history: &HistoryKey, action: usize) -> (f64, KeyGradient) {
        let key = self.key(history);
        let p = self.distribution_for_key(&key);
        let lp = self.log_prob_for_key(&key, action);
        let mut values: Vec<f64> = p.iter().map(|x| -x).collect();
        values[action] += 1.0;
        (lp, KeyGradient { key, values })
    }

    /// Flattens the logits of `keys` (in order) into one parameter vector.
    /// Missing keys contribute zeros.
    pub fn flatten(&self, keys: &[HistoryKey]) -> Vec<f64> {
        keys.iter().flat_map(|k| self.logits.get(k).cloned().unwrap_or_else(|| vec![0.0; self.num_actions])).collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn with_flat(&self, keys: &[HistoryKey], params: &[f64]) -> Self {
        let mut out = self.clone();
        for (k, chunk) in keys.iter().zip(params.chunks(self.num_actions)) {
            out.logits.insert(k.clone(), chunk.to_vec());
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PolicyDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PolicyDocument = serde_json::from_str(text)?;
        doc.try_into()
    }
}

impl Actor for TabularHistoryPolicy {
    fn action_distribution(&self, history: &HistoryKey, _state: usize) -> Result<Vec<f64>> {
        Ok(TabularHistoryPolicy::action_distribution(self, history))
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyEntry {
    key: HistoryKey,
    logits: Vec<f64>,
}

/// On-disk form: `{truncation_window, num_actions, entries: [{key, logits}]}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDocument {
    truncation_window: usize,
    num_actions: usize,
    entries: Vec<PolicyEntry>,
}

impl From<&TabularHistoryPolicy> for PolicyDocument {
    fn from(p: &TabularHistoryPolicy) -> Self {
        PolicyDocument {
            truncation_window: p.truncation_window,
            num_actions: p.num_actions,
            entries: p.logits.iter().map(|(k, l)| PolicyEntry { key: k.clone(), logits: l.clone() }).collect(),
        }
    }
}

impl TryFrom<PolicyDocument> for TabularHistoryPolicy {
    type Error = crate::error::LeapError;

    fn try_from(doc: PolicyDocument) -> Result<Self> {
        if doc.num_actions == 0 {
            return Err(invalid("policy needs at least one action"));
        }
        let mut p = TabularHistoryPolicy::new(doc.num_actions, doc.truncation_window);
        for e in doc.entries {
            if e.key.truncated(doc.truncation_window) != e.key {
                return Err(invalid(format!("key {:?} is longer than the truncation window", e.key)));
            }
            p.set_logits(e.key, e.logits)?;
        }
        Ok(p)
    }
}

/// Immutable iterate `π_i` of the learning loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    pub iteration: usize,
    pub label: String,
    pub policy: Arc<TabularHistoryPolicy>,
}

impl PolicySnapshot {
    pub fn new(iteration: usize, policy: TabularHistoryPolicy) -> Self {
        PolicySnapshot { iteration, label: format!("pi_{iteration}"), policy: Arc::new(policy) }
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            iteration: usize,
            label: &'a str,
            policy: PolicyDocument,
        }
        Ok(serde_json::to_string_pretty(&Doc {
            iteration: self.iteration,
            label: &self.label,
            policy: PolicyDocument::from(self.policy.as_ref()),
        })?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h(entries: &[u32]) -> HistoryKey {
        HistoryKey::from_entries(entries.to_vec()).unwrap()
    }

    #[test]
    fn zero_logits_and_unseen_keys_are_uniform() {
        let mut p = TabularHistoryPolicy::new(4, 3);
        p.logits_mut(&h(&[0]));
        assert_eq!(p.action_distribution(&h(&[0])), vec![0.25; 4]);
        assert_eq!(p.action_distribution(&h(&[1, 2, 0])), vec![0.25; 4]);
    }

    #[test]
    fn closed_form_softmax() {
        let mut p = TabularHistoryPolicy::new(2, 1);
        p.set_logits(h(&[0]), vec![2f64.ln(), 0.0]).unwrap();
        let d = p.action_distribution(&h(&[0]));
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-12 && (d[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn histories_sharing_the_window_share_the_distribution() {
        let mut p = TabularHistoryPolicy::new(3, 1);
        p.set_logits(h(&[1, 2, 0]), vec![0.3, -1.0, 2.0]).unwrap();
        let a = p.action_distribution(&h(&[0, 0, 1, 2, 0]));
        let b = p.action_distribution(&h(&[1, 1, 1, 2, 0]));
        assert_eq!(a, b);
        assert_eq!(a, p.action_distribution(&h(&[1, 2, 0])));
    }

    #[test]
    fn uniform_log_prob() {
        let p = TabularHistoryPolicy::new(4, 2);
        let (lp, g) = p.log_prob_and_grad(&h(&[0]), 1);
        assert!((lp + 4f64.ln()).abs() < 1e-15);
        assert!(g.values.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut p = TabularHistoryPolicy::new(5, 4);
        let key = h(&[2, 1, 0]);
        let logits = vec![0.7, -1.3, 2.1, 0.0, -0.4];
        p.set_logits(key.clone(), logits.clone()).unwrap();
        for action in 0..5 {
            let (_, g) = p.log_prob_and_grad(&key, action);
            for i in 0..5 {
                let mut up = logits.clone();
                let mut dn = logits.clone();
                up[i] += 1e-5;
                dn[i] -= 1e-5;
                let lp = |l: &[f64]| log_softmax(l)[action];
                let fd = (lp(&up) - lp(&dn)) / 2e-5;
                assert!((fd - g.values[i]).abs() / g.values[i].abs().max(1.0) < 1e-6);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let mut p = TabularHistoryPolicy::new(3, 2);
        p.set_logits(h(&[1]), vec![0.1, 0.2, -5.0]).unwrap();
        p.set_logits(h(&[0, 2, 1]), vec![1.0, 0.0, 0.0]).unwrap();
        let back = TabularHistoryPolicy::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(TabularHistoryPolicy::from_json(
            r#"{"truncation_window":0,"num_actions":2,"entries":[{"key":[0,1,0],"logits":[0,0]}]}"#
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn distribution_sums_to_one(logits in prop::collection::vec(-30.0f64..30.0, 1..8)) {
            let n = logits.len();
            let mut p = TabularHistoryPolicy::new(n, 2);
            p.set_logits(h(&[0]), logits).unwrap();
            let d = p.action_distribution(&h(&[0]));
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(d.iter().all(|x| *x > 0.0));
        }

        #[test]
        fn gradient_sums_to_zero(logits in prop::collection::vec(-10.0f64..10.0, 2..8), pick in 0usize..8) {
            let n = logits.len();
            let mut p = TabularHistoryPolicy::new(n, 2);
            p.set_logits(h(&[0]), logits).unwrap();
            let (_, g) = p.log_prob_and_grad(&h(&[0]), pick % n);
            prop_assert!(g.values.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
