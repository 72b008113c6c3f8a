//! Exact Bayes filtering over the hidden state.
//!
//! Updates run in the log domain; the returned beliefs are ordinary
//! probabilities.

use serde::{Deserialize, Serialize};

use super::{HistoryKey, PomdpSpec};
use crate::error::{LeapError, Result};
use crate::math::logsumexp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub probs: Vec<f64>,
}

impl Belief {
    fn from_log(log_unnorm: Vec<f64>, what: impl FnOnce() -> String) -> Result<Self> {
        let z = logsumexp(&log_unnorm);
        if z == f64::NEG_INFINITY || z.is_nan() {
            return Err(LeapError::InconsistentEvidence(what()));
        }
        Ok(Belief { probs: log_unnorm.into_iter().map(|x| (x - z).exp()).collect() })
    }
}

/// Posterior over `s_1` after the first observation.
pub fn initial_belief(spec: &PomdpSpec, observation: usize) -> Result<Belief> {
    spec.check_observation(observation)?;
    let sup = spec.support();
    let null = spec.null_action();
    let log: Vec<f64> = (0..spec.num_states).map(|s| sup.log_initial[s] + sup.log_obs[s][null][observation]).collect();
    Belief::from_log(log, || format!("first observation {observation} has zero probability"))
}

/// `b'(s') ∝ O(o|s',a) · Σ_s T(s'|s,a) b(s)`, summing only over states in
/// which `a` does not end the episode.
pub fn belief_update(spec: &PomdpSpec, belief: &Belief, action: usize, observation: usize) -> Result<Belief> {
    spec.check_action(action)?;
    spec.check_observation(observation)?;
    if belief.probs.len() != spec.num_states {
        return Err(LeapError::InvalidArgument("belief length disagrees with num_states".into()));
    }
    let sup = spec.support();
    let mut terms: Vec<Vec<f64>> = vec![Vec::new(); spec.num_states];
    for (s, p) in belief.probs.iter().enumerate() {
        // Mass that just ended the episode cannot continue the history.
        if *p <= 0.0 || sup.terminal[s][action] {
            continue;
        }
        let lp = p.ln();
        for &(next, lt) in &sup.next[s][action] {
            terms[next].push(lp + lt);
        }
    }
    let log: Vec<f64> = terms
        .iter()
        .enumerate()
        .map(
            |(next, t)| {
                if t.is_empty() {
                    f64::NEG_INFINITY
                } else {
                    sup.log_obs[next][action][observation] + logsumexp(t)
                }
            },
        )
        .collect();
    Belief::from_log(log, || format!("observation {observation} after action {action} has zero probability"))
}

/// Filters a whole history from scratch.
pub fn belief_from_history(spec: &PomdpSpec, history: &HistoryKey) -> Result<Belief> {
    let e = history.entries();
    let mut b = initial_belief(spec, e[0] as usize)?;
    for pair in e[1..].chunks(2) {
        b = belief_update(spec, &b, pair[0] as usize, pair[1] as usize)?;
    }
    Ok(b)
}
